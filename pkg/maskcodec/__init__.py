from maskcodec.pca import (
    MaskCodecError,
    PCABasis,
    decode_mask,
    encode_grid,
    encode_mask,
    fit_pca,
    paste_mask,
    reconstruct_grid,
)

__all__ = [
    "MaskCodecError",
    "PCABasis",
    "decode_mask",
    "encode_grid",
    "encode_mask",
    "fit_pca",
    "paste_mask",
    "reconstruct_grid",
]
