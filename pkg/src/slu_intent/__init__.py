"""End-to-end spoken intent classification with recurrent slot classifiers."""
from .data import SLOTS, SlotVocab, ToySpec, UtteranceRecord, build_vocabs, generate_toy_dataset, parse_manifest
from .decode import IntentPrediction, beam_search_decode, greedy_decode, intent_accuracy
from .estimator import MFCCFeaturizer, SLUIntentClassifier
from .model import ModelConfig, SamplingSchedule, SlotPosteriors, SLUNetwork, teacher_forcing_prob

__version__ = "0.1.0"

__all__ = [
    "SLOTS", "IntentPrediction", "MFCCFeaturizer", "ModelConfig", "SLUIntentClassifier", "SLUNetwork",
    "SamplingSchedule", "SlotPosteriors", "SlotVocab", "ToySpec", "UtteranceRecord", "beam_search_decode",
    "build_vocabs", "generate_toy_dataset", "greedy_decode", "intent_accuracy", "parse_manifest",
    "teacher_forcing_prob",
]
