"""Non-metric compatibility learning with mixtures of embeddings.

Modules: ``corpus`` (items, features, edges), ``models`` (distances and
parameter files), ``training`` (objective, gradients, L-BFGS), ``sampling``
(negatives and splits), ``evaluation``, ``synthetic``, ``featurize``,
``reco`` and the ``cli``.
"""
from .corpus import Corpus, RelationSet, load_corpus, load_relations
from .models import LmtParams, MonomerParams, WnnParams, load_model, save_model
from .training import Objective, TrainConfig, TrainReport, train

__all__ = ["Corpus", "RelationSet", "load_corpus", "load_relations", "LmtParams", "MonomerParams",
           "WnnParams", "load_model", "save_model", "Objective", "TrainConfig", "TrainReport", "train"]
__version__ = "0.1.0"
