from losses.targets     import DenseTargets, assign_targets, collate_targets, depth_validity, location_grid, to_device
from losses.task_losses import (loss_cent, loss_cls, loss_depth, loss_id, loss_is, loss_reg, loss_seg,
                                seg_class_weights)
from losses.bundle      import (GEOMETRIC_LOSSES, GROUP_SELECTORS, LOSS_NAMES, SEMANTIC_LOSSES, TASK_LOSSES,
                                LossBundle, LossWeights, active_losses, compute_losses, grouped_losses,
                                losses_for_selector, mtl_loss, selected_objective, task_mask_of)
