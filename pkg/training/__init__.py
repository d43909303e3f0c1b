from training.dataset_io import load_dataset, save_dataset, split_held_out
from training.evaluate import EvaluationReport, evaluate, write_report
from training.labels import GtLabels, make_gt_labels
from training.losses import FocalParams, focal_loss, rotation_loss, total_loss, viewpoint_loss
from training.optim import Adam, cosine_lr
from training.synth import Sample, ShapeParams, synth_dataset
from training.trainer import TrainingEngine, TrainResult
