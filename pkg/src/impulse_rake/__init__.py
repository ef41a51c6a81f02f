"""Link-level IR-UWB simulation of sparse event frames with spiking-network inference."""
from .channel import (ChannelParams, ChannelRealization, ReceivedWaveform, channel_preset, normalize_channel,
                      propagate, sample_channel)
from .datasets import load_toy_dataset, make_toy_dataset
from .detection import (SparseMAPDetector, SparsityEstimate, analytic_ber, ber_at_threshold, detect_bits,
                        estimate_sparsity, majority_vote, map_threshold, optimize_lambda, reconstruct_frame,
                        vote_error_probs)
from .events import FrameTiler, accumulate_events, assemble_frame, tile_frame, vectorize_tile
from .exceptions import (ConfigError, EstimationError, EventError, ImpulseRakeError, NumericalError,
                         StructureError, TrainingError, WeightFormatError)
from .harness import (ExperimentConfig, ResultRecord, parse_config, run_ber_sweep, run_collision_analysis,
                      run_e2e_trial, validate, wilson_interval)
from .phy import HopCode, LinkConfig, PulseShape, PulseTrain, gen_th_code, modulate_ook, modulate_ppm, monocycle
from .rake import FingerSet, FrameStatistics, correlate, link_stats, mrc_combine, select_paths
from .snn import LIFClassifier, SnnNetwork, forward, lif_step, load_weights, save_weights, train_toy

__version__ = "0.1.0"
