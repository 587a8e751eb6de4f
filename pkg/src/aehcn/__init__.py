"""Context-aware out-of-domain utterance handling for task-oriented dialogs.

Recurrent dialog policies (with and without an autoencoder reconstruction
score input), counterfeit-turn data augmentation for training, controlled
OOD augmentation for evaluation, and the metrics harness around them.
"""

__version__ = "0.1.0"
