"""Reinforcement-learning tools for light transport simulation.

Path guiding with a learned incident-radiance field, learned light
selection for next-event estimation, and radiance baked into a grid of
tiny neural networks, on top of a small deterministic path tracer.
"""
from .baking import (VoxelNetGrid, eval_baked_radiance, generate_training_data, render_baked,
                     train_visibility_net, train_voxel_networks)
from .errors import ContractError, SceneError, TrainingError
from .geometry import Camera, Material, Ray, Scene, ShadingPoint, eval_bsdf, intersect, sample_light_point
from .guiding import QGrid, QNetwork, guided_scatter_direction, q_update, residual_target, train_q_network_online
from .imaging import difference_image, false_color_light_index, read_pfm, rmse, write_image
from .nee import (TDTable, build_cdf, epsilon_greedy_select, estimate_direct, render_with_online_learning,
                  sample_cdf, softmax_temperature_select, td_update)
from .nn import MiniBatch, TinyMLP, softmax
from .qmc import SampleStream, halton_point, radical_inverse
from .render import ExperimentConfig, ImageBuffer, path_trace_guided, path_trace_reference
from .scenes import builtin_scene, load_scene, scenes_builtin

__version__ = "0.1.0"
