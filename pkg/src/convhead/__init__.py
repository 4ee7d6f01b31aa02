"""Listener, talker and conversational-agent head motion generators driven by
speech features and the counterpart's 3DMM motion coefficients."""

from .acoustic import AudioClip, extract_features, load_features, read_wav, save_features
from .checkpoint import Checkpoint
from .coeffs import (ATTITUDES, DIALOG_ACTS, CoeffLayout, CoeffSequence, ConditioningVocabulary,
                     ConversationManifest, Turn, Violation, load_manifest, load_sequence,
                     save_manifest, save_sequence, validate_manifest)
from .errors import (ConditioningError, ConfigError, ConvHeadError, FormatError, InvalidInputError,
                     LayoutError, ManifestError, NumericError, ShapeError)
from .evaluation import EvalReport, baseline_mirror, baseline_random, evaluate_run, fd_metrics
from .model import DecoderState, ModelConfig, decoder_step, fuse_audio_motion, init_state, switch_role
from .synth import SynthConfig, synth_conversation, synth_corpus
from .tasks import (TurnInput, generate_conversation, generate_listener, generate_talker,
                    listener_aware_branch)
from .training import TrainingConfig, loss_gen, loss_mot, loss_total, train_task

__version__ = "0.1.0"
