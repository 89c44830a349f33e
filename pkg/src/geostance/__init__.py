"""Adversarial cross-target / zero-shot stance classification with policy descriptions and region graphs."""
from .data import (STANCES, UNKNOWN_REGION, DataError, GeoGraph, LabeledExample, PolicyDescription,
                   SplitBundle, TaskSpec, UnlabeledExample, build_splits, load_corpus, load_geo_graph)
from .metrics import MetricReport, f1_per_class, f_avg, f_m
from .model import StanceModel, build_model, count_parameters, grl_apply
from .synth import SynthConfig, synth_generate
from .training import EncoderConfig, TrainConfig, fit

__version__ = "0.1.0"
