"""Tree-informed LDA: variational EM for topic models over category trees."""
from tilda._backend import BACKEND
from tilda.corpus import (Document, HierCorpus, Vocabulary, load_tree_corpus,
                          load_uci_bagofwords, preprocess, prune_barren, split_document)
from tilda.evaluation import EvalReport, document_completion_ll, estimate_heldout_theta
from tilda.inference import ElboBreakdown, compute_elbo, opt_document
from tilda.model import (ModelParams, TrainedModel, VariationalState, init_state,
                         load_model, save_model)
from tilda.scheduler import TrainConfig, TrainResult, train, train_parallel, train_sequential
from tilda.synth import TreeShape, generate_corpus

__version__ = "0.1.0"
