"""Hash-grid radiance fields with trainable saliency pruning.

A compact NeRF engine: multi-resolution hash encoding, a jointly trained
3D saliency grid sparsified by an augmented-Lagrangian (ADMM) pruner,
and a zero-skipping gated MLP decoder, plus volume rendering, synthetic
ground-truth scenes, and training/evaluation tooling. All gradients are
hand-written adjoints of the fixed pipeline and are verified against
central finite differences.
"""

from .decoder import (DecoderWeights, GateConfig, alpha_schedule,
                      decoder_backward, gated_density, hard_gate, sh_encode,
                      soft_gate)
from .errors import (ConfigError, DataError, HollowFieldError, IntegrityError,
                     NumericalError)
from .hashgrid import (DecoderLayout, HashGridConfig, HashGridTable, encode,
                       encode_backward, hash_index, level_resolutions,
                       param_count)
from .model import FieldConfig, RadianceField
from .params import (AdamState, ParamTensor, adam_step, finite_diff_check,
                     seeded_init, zero_grads)
from .render import (Camera, composite, composite_backward, mse_loss, psnr,
                     rays_from_camera, render_image, stratified_samples)
from .saliency import (SaliencyGrid, apply_saliency, saliency_backward,
                       saliency_weight, slice_export, sparsity_l1)
from .scene_io import (Dataset, Frame, gen_synthetic, load_checkpoint,
                       load_transforms_json, read_png, save_checkpoint,
                       save_dataset, write_png)
from .synthetic import (CollisionFixture, SyntheticScene,
                        build_collision_fixture, make_scene, oracle_render,
                        ring_cameras)
from .training import (PrunerState, TrainConfig, augmented_loss, dual_update,
                       evaluate, l1_loss, train_collision_fixture, train_loop,
                       train_step)

__version__ = "0.1.0"
