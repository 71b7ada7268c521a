"""Sign Language MNIST classifier built on numpy alone.

Layers, optimizer and training loop are implemented by hand; the
``pipeline`` module turns a trained model into a confidence-gated
letter classifier for grayscale frames.
"""

from .data import Dataset, GrayImage, decode_gray_image, load_csv, load_dataset, prepare
from .metrics import evaluate
from .model import SequentialModel, build_model, count_parameters, load, save
from .pipeline import Prediction, SpeakHook, classify_stream, letter_map, predict, preprocess
from .train import Adam, EarlyStopping, TrainConfig, TrainingHistory, split_train_val

__version__ = "0.1.0"
