from scenegen.spec      import InstanceAnnotation, Sample, SceneSpec, ThingClassSpec, validate_sample
from scenegen.generator import generate_scene
from scenegen.dataset   import DatasetManifest, class_frequencies, load_manifest, load_sample, render_dataset

__all__ = [
    "InstanceAnnotation",
    "Sample",
    "SceneSpec",
    "ThingClassSpec",
    "validate_sample",
    "generate_scene",
    "DatasetManifest",
    "class_frequencies",
    "load_manifest",
    "load_sample",
    "render_dataset",
]
