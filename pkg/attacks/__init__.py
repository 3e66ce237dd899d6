from attacks.config  import (AttackConfig, AttackError, AttackOutcome, HidingTargetError, image_tensor,
                             pgd_iterations)
from attacks.pgd     import pgd_attack, project, signed_gradient_steps
from attacks.dag     import dag_swap_attack, normalized_step
from attacks.hiding  import build_hiding_target_depth, build_hiding_target_seg, hide_class, hiding_attack
from attacks.persist import load_perturbation, load_trace, save_outcome
