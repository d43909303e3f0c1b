"""
Training engine.

One iteration draws a batch from a seeded shuffle, builds one graph per
sample, sums parameter gradients in batch order, averages them and takes an
Adam step at the cosine-annealed learning rate. Metrics go to a CSV log
(iter,loss,loss_vp,loss_ip,lr,median_deg); median_deg is filled on
evaluation iterations only.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from common.errors import DegenerateInputError, InvalidArgumentError, NumericError
from common.seeding import named_rng
from configs.app import Config
from eventlog.setup import ExperimentLogger
from network.vinet import VINet, architecture_header
from tensorcore.checkpoint import save_checkpoint
from tensorcore.tensor import as_tensor
from training.evaluate import EvaluationReport, evaluate, sample_maps
from training.labels import make_gt_labels
from training.losses import FocalParams, rotation_loss, total_loss, viewpoint_loss
from training.optim import Adam, cosine_lr
from training.synth import Sample

logger = logging.getLogger(__name__)

LOG_COLUMNS = ['iter', 'loss', 'loss_vp', 'loss_ip', 'lr', 'median_deg']


@dataclass
class TrainResult:
    checkpoint: Optional[Path]
    history: pd.DataFrame
    final_report: Optional[EvaluationReport]


class TrainingEngine:
    def __init__(self, config: Config, model: Optional[VINet] = None, events: Optional[ExperimentLogger] = None):
        self.config = config
        self.net_cfg = config.network
        self.train_cfg = config.train
        seed = self.train_cfg.seed
        self.model = model if model is not None else VINet(self.net_cfg, named_rng(seed, 'init'))
        self.optimizer = Adam(self.model.parameters())
        self.focal = FocalParams(self.train_cfg.focal_alpha, self.train_cfg.focal_gamma)
        self.events = events or ExperimentLogger('vinet.train')
        self.history: List[Dict[str, float]] = []

    def sample_losses(self, sample: Sample):
        """(total, l_vp, l_ip) for one sample; l_vp is zero for the direct head"""
        out = self.model.forward_maps(sample_maps(self.model, sample))
        l_ip = rotation_loss(out.r_matrix, sample.gt_rotation)
        if out.viewpoint is None:
            return l_ip, as_tensor(0.0, l_ip.dtype), l_ip
        H, W = self.net_cfg.output_resolution
        gt = make_gt_labels(sample.gt_rotation, H, W)
        l_vp = viewpoint_loss(out.viewpoint, gt, self.focal)
        return total_loss(l_ip, l_vp, self.train_cfg.lambda_vp), l_vp, l_ip

    def _batches(self, n: int):
        """Endless stream of index batches from per-epoch seeded permutations"""
        epoch = 0
        while True:
            order = named_rng(self.train_cfg.seed, 'shuffle', epoch).permutation(n)
            size = self.train_cfg.batch_size
            # drop the ragged tail unless the whole set is smaller than a batch
            usable = n - n % size if n >= size else n
            for start in range(0, usable, size):
                yield order[start:start + size]
            epoch += 1

    def _dump_nan(self, log_path: Optional[Path], iteration: int, batch: Sequence[Sample], error: Exception) -> None:
        dump = {
            'iteration': iteration,
            'batch_id': iteration,
            'sample_ids': [s.id for s in batch],
            'op': getattr(error, 'op', None),
            'error': str(error),
            'recent': self.history[-5:],
        }
        target = (log_path.parent if log_path else Path('.')) / f"nan_dump_{iteration}.json"
        target.write_text(json.dumps(dump, indent=2, default=str))
        self.events.error(f"Non-finite training state at iteration {iteration}; dumped to {target}",
                          tags=['NAN'], stage='train', iteration=iteration, payload=dump)

    def step(self, iteration: int, batch: Sequence[Sample], log_path: Optional[Path] = None) -> Dict[str, float]:
        lr = cosine_lr(self.train_cfg.learning_rate, iteration, self.train_cfg.iterations)
        self.model.zero_grad()
        totals = np.zeros(3)
        try:
            for sample in batch:
                loss, l_vp, l_ip = self.sample_losses(sample)
                values = [loss.item(), l_vp.item(), l_ip.item()]
                if not np.all(np.isfinite(values)):
                    raise NumericError(f"Loss is not finite for sample {sample.id}", op='loss')
                loss.backward()
                totals += values
        except (NumericError, DegenerateInputError) as e:
            self._dump_nan(log_path, iteration, batch, e)
            raise NumericError(f"Training diverged at iteration {iteration}: {e}",
                               op=getattr(e, 'op', None), batch_id=iteration) from e

        for param in self.model.parameters():
            if param.grad is not None:
                param.grad /= len(batch)
        self.optimizer.step(lr)
        mean = totals / len(batch)
        return {'iter': iteration, 'loss': mean[0], 'loss_vp': mean[1], 'loss_ip': mean[2], 'lr': lr,
                'median_deg': np.nan}

    def train(self, train_set: Sequence[Sample], held_out: Sequence[Sample] = (),
              checkpoint_path: Optional[Union[str, Path]] = None,
              log_path: Optional[Union[str, Path]] = None, threads: int = 1) -> TrainResult:
        if not train_set:
            raise InvalidArgumentError("Training set is empty")
        log_path = Path(log_path) if log_path else None
        cfg = self.train_cfg
        self.events.info(f"Training for {cfg.iterations} iterations on {len(train_set)} samples",
                         tags=['TRAIN'], stage='train',
                         payload={'batch_size': cfg.batch_size, 'lr': cfg.learning_rate,
                                  'held_out': len(held_out), 'params': self.model.parameter_count()})

        batches = self._batches(len(train_set))
        report = None
        for it in range(cfg.iterations):
            batch = [train_set[i] for i in next(batches)]
            row = self.step(it, batch, log_path)
            last = it == cfg.iterations - 1
            if held_out and ((it + 1) % cfg.eval_interval == 0 or last):
                report = evaluate(self.model, held_out, threads)
                row['median_deg'] = report.median_deg
                self.events.info(f"Held-out median {report.median_deg:.2f} deg at iteration {it}",
                                 tags=['EVAL'], stage='train', iteration=it, payload=report.to_dict())
            self.history.append(row)
            if (it + 1) % cfg.log_interval == 0 or last:
                logger.info(f"iter {it}: loss={row['loss']:.5f} vp={row['loss_vp']:.5f} "
                            f"ip={row['loss_ip']:.5f} lr={row['lr']:.2e}")
                if log_path:
                    self.write_log(log_path)

        history = self.history_frame()
        if checkpoint_path:
            header = dict(architecture_header(self.net_cfg))
            header['iterations'] = str(cfg.iterations)
            header['seed'] = str(cfg.seed)
            save_checkpoint(checkpoint_path, self.model, header)
            self.events.info(f"Checkpoint written to {checkpoint_path}", tags=['CHECKPOINT'], stage='train')
        return TrainResult(Path(checkpoint_path) if checkpoint_path else None, history, report)

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=LOG_COLUMNS)

    def write_log(self, path: Union[str, Path]) -> None:
        self.history_frame().to_csv(path, index=False)
