from orchestration.state     import Campaign, CampaignCell, CellFailedError, NonFiniteLossError, RunConfig, RunnerError
from orchestration.data      import Batch, SceneDataset, collate_batch, make_loader
from orchestration.trainer   import Trainer, TrainResult, train
from orchestration.evaluator import EvalAccumulator, TrainedModel, evaluate, evaluate_model, load_trained
from orchestration.campaign  import CampaignResult, CellResult, run_campaign
from orchestration.timing    import timing_probe
