"""Mean-teacher training loop.

One thread owns the student and teacher weights.  Inpainting jobs run on a
small worker pool and publish records into the atomic store; the trainer
snapshots the store at epoch boundaries (after draining pending jobs), so
training never reads a half-written record and a fixed seed reproduces runs
bit for bit with the mock backend.
"""

import copy
import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

from .augment import paired_crop, strong_augment, weak_augment
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, config_digest
from .dataset import SceneDataset, image_to_unit, split_labeled, to_model_input
from .density import BinSpec, DensityMap, bin_index_map, gt_foreground_mask
from .evaluate import evaluate
from .heads import CountingModel
from .inpaint import (
    InpaintStore,
    get_inpaint_backend,
    inconsistency_levels,
    level_weights,
    make_inpaint_record,
    weighted_mask,
)
from .losses import (
    loss_cls,
    loss_consistency,
    loss_inpaint,
    loss_reg,
    total_loss,
    warmup_weight,
)
from .prompts import PromptStore
from .scan import get_scan_fn


def ema_update(teacher: torch.nn.Module, student: torch.nn.Module, decay: float = 0.97) -> None:
    """theta_T <- decay * theta_T + (1 - decay) * theta_S, elementwise.

    Floating-point buffers (batch-norm statistics) follow the same average;
    integer buffers are copied.
    """
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ValueError("teacher/student parameter sets do not match")
    with torch.no_grad():
        for name, tp in t_params.items():
            sp = s_params[name]
            if tp.shape != sp.shape:
                raise ValueError(f"shape mismatch for {name}: {tp.shape} vs {sp.shape}")
            tp.mul_(decay).add_(sp, alpha=1.0 - decay)
        for (name, tb), (_, sb) in zip(teacher.named_buffers(), student.named_buffers()):
            if tb.shape != sb.shape:
                raise ValueError(f"buffer shape mismatch for {name}")
            if tb.dtype.is_floating_point:
                tb.mul_(decay).add_(sb, alpha=1.0 - decay)
            else:
                tb.copy_(sb)


def _stable_id_hash(image_id: str) -> int:
    return zlib.crc32(image_id.encode("utf-8"))


class Trainer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)

        self.bin_spec = BinSpec(cfg.bin_edges)
        scan_fn = get_scan_fn(cfg.scan_backend)
        self.student = CountingModel(
            num_bins=self.bin_spec.num_bins,
            channels=tuple(cfg.model.channels),
            depths=tuple(cfg.model.depths),
            state_dim=cfg.model.state_dim,
            scan_fn=scan_fn,
        )
        self.teacher = copy.deepcopy(self.student)
        for p in self.teacher.parameters():
            p.requires_grad_(False)
        self.teacher.eval()

        self.optimizer = torch.optim.AdamW(
            self.student.parameters(),
            lr=cfg.optimizer.lr,
            weight_decay=cfg.optimizer.weight_decay,
        )

        self.train_ds = SceneDataset(cfg.train_dir) if cfg.train_dir else None
        self.val_ds = SceneDataset(cfg.val_dir) if cfg.val_dir else None
        if self.train_ds is not None:
            self.labeled_ids, self.unlabeled_ids = split_labeled(
                len(self.train_ds), cfg.labeled_fraction, cfg.seed
            )
        else:
            self.labeled_ids, self.unlabeled_ids = [], []

        self.out_dir = Path(cfg.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.store = InpaintStore(self.out_dir / "inpaint_store")
        self.prompt_store = PromptStore()
        self.inpaint_backend = self._make_backend()
        self._executor = ThreadPoolExecutor(max_workers=max(1, cfg.inpaint_workers))
        self._pending = []

        self.data_rng = np.random.default_rng([cfg.seed, 0xDA7A])
        self.epoch = 0
        self.history: list[dict] = []
        self._metrics_path = self.out_dir / "metrics.jsonl"

    # ------------------------------------------------------------------
    # plumbing

    def _make_backend(self):
        if self.cfg.inpaint_backend == "mock":
            return get_inpaint_backend("mock")
        return get_inpaint_backend(
            "diffusion-service",
            url=self.cfg.service_url,
            timeout=self.cfg.service_timeout,
            retries=self.cfg.service_retries,
        )

    def _log(self, record: dict) -> None:
        with self._metrics_path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def _sample_rng(self, epoch: int, step: int, lane: int, slot: int):
        return np.random.default_rng([self.cfg.seed, epoch, step, lane, slot])

    # ------------------------------------------------------------------
    # batch construction

    def _labeled_views(self, indices, epoch, step):
        cfg = self.cfg
        inputs, dens, bins, masks = [], [], [], []
        for slot, i in enumerate(indices):
            rng = self._sample_rng(epoch, step, 0, slot)
            img = self.train_ds.load_image(i)
            dm = self.train_ds.density(i, cfg.stride, cfg.density_mode, cfg.sigma_fixed)
            view, tgts, _ = paired_crop(
                img,
                {"density": dm.values},
                cfg.augment.crop_size,
                rng,
                stride=cfg.stride,
                flip_p=cfg.augment.flip_p,
            )
            d = DensityMap(tgts["density"], stride=cfg.stride)
            inputs.append(to_model_input(image_to_unit(view)))
            dens.append(torch.from_numpy(d.values.astype(np.float32)))
            bins.append(torch.from_numpy(bin_index_map(d, self.bin_spec)))
            masks.append(
                torch.from_numpy(
                    gt_foreground_mask(d, cfg.loss.fg_tau).astype(np.float32)
                )
            )
        return {
            "input": torch.stack(inputs),
            "density": torch.stack(dens),
            "bins": torch.stack(bins),
            "mask": torch.stack(masks),
        }

    def _pair_views(self, images, epoch, step, lane):
        cfg = self.cfg
        weak, strong = [], []
        for slot, img in enumerate(images):
            rng = self._sample_rng(epoch, step, lane, slot)
            view, _, _ = paired_crop(
                img, {}, cfg.augment.crop_size, rng,
                stride=cfg.stride, flip_p=cfg.augment.flip_p,
            )
            unit = image_to_unit(view)
            weak.append(to_model_input(weak_augment(unit, rng)))
            strong.append(to_model_input(strong_augment(unit, rng, cfg.augment)))
        if not weak:
            return None
        return {"weak": torch.stack(weak), "strong": torch.stack(strong)}

    # ------------------------------------------------------------------
    # the training step

    def train_step(self, labeled_batch, unlabeled_batch, inpainted_batch, epoch: int) -> dict:
        cfg = self.cfg
        self.student.train()

        # separate forwards per sub-batch so batch-norm statistics of the
        # supervised path are not skewed by masked/inpainted views; labeled
        # goes last so the running stats the teacher inherits lean clean
        inputs = [
            x["strong"] for x in (unlabeled_batch, inpainted_batch) if x is not None
        ] + [labeled_batch["input"]]
        outs = [self.student(b) for b in inputs]
        outs = outs[-1:] + outs[:-1]  # labeled first again
        s_dens = [o[0] for o in outs]
        s_probs = [o[1] for o in outs]

        l_s_reg = loss_reg(
            s_dens[0], labeled_batch["density"], labeled_batch["mask"], cfg.loss
        )
        l_s_cls = loss_cls(labeled_batch["bins"], s_probs[0])

        zero = s_dens[0].new_zeros(())
        l_u, l_inp = zero, zero
        cursor = 1
        with torch.no_grad():
            if unlabeled_batch is not None:
                t_dens, t_probs = self.teacher(unlabeled_batch["weak"])
            if inpainted_batch is not None:
                n = inpainted_batch["weak"].shape[0]
                ti_dens, ti_probs = self.teacher(
                    torch.cat([inpainted_batch["weak"], inpainted_batch["strong"]])
                )
                tiw_dens, tiw_probs = ti_dens[:n], ti_probs[:n]
                tis_probs = ti_probs[n:]

        if unlabeled_batch is not None:
            l_u = loss_consistency(s_dens[cursor], t_dens, s_probs[cursor], t_probs)
            cursor += 1
        if inpainted_batch is not None:
            levels = inconsistency_levels(tis_probs, tiw_probs)
            mask = weighted_mask(
                levels, epoch, cfg.max_level, cfg.inpaint_weight_decay
            ).to(torch.float32)
            l_inp = loss_inpaint(
                s_dens[cursor], tiw_dens, s_probs[cursor], tiw_probs, mask
            )

        total = total_loss(l_s_reg, l_s_cls, l_u, l_inp, epoch, cfg.loss)
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        ema_update(self.teacher, self.student, cfg.ema_decay)

        return {
            "loss_total": float(total.detach()),
            "loss_reg": float(l_s_reg.detach()),
            "loss_cls": float(l_s_cls.detach()),
            "loss_u": float(l_u.detach()),
            "loss_inp": float(l_inp.detach()),
            "lambda_w": warmup_weight(epoch, cfg.loss.warmup_epochs),
        }

    # ------------------------------------------------------------------
    # inpaint refresh

    def _refresh_mask(self, image: np.ndarray) -> np.ndarray:
        """Background mask for one whole image from the teacher classifier.

        When ``refresh_max_side`` is set, the teacher sees a downscaled copy
        and the mask is rescaled back; the inpainted record keeps native
        resolution either way.
        """
        from .evaluate import _prepare
        from .inpaint import build_inpaint_mask, mask_to_size

        cfg = self.cfg
        max_side = cfg.refresh_max_side or 10**9
        prepared, vh, vw = _prepare(image, cfg.stride, 0, max_side=max_side)
        with torch.no_grad():
            _, probs = self.teacher(
                to_model_input(image_to_unit(prepared)).unsqueeze(0)
            )
        small = build_inpaint_mask(
            probs[0, :, :vh, :vw], prepared.shape[:2], cfg.stride
        )
        return mask_to_size(small, image.shape[:2])

    def inpaint_refresh(self, epoch: int) -> int:
        """Queue a re-inpaint of every unlabeled image; returns queue size.

        Masks come from the current teacher on the main thread; the backend
        call and store write run on the worker pool.
        """
        if self.train_ds is None or not self.unlabeled_ids:
            return 0
        self.teacher.eval()
        submitted = 0
        for i in self.unlabeled_ids:
            image_id = self.train_ds.image_id(i)
            image = self.train_ds.load_image(i)
            mask = self._refresh_mask(image)
            seed = [self.cfg.seed, epoch, _stable_id_hash(image_id)]
            fut = self._executor.submit(
                self._inpaint_job, image, mask, image_id, epoch, seed
            )
            self._pending.append((image_id, fut))
            submitted += 1
        return submitted

    def _inpaint_job(self, image, mask, image_id, epoch, seed):
        record = make_inpaint_record(
            image,
            None,
            self.prompt_store,
            self.inpaint_backend,
            source_id=image_id,
            epoch=epoch,
            seed=seed,
            stride=self.cfg.stride,
            mask=mask,
        )
        self.store.put(record)

    def _drain_inpaint_jobs(self) -> None:
        pending, self._pending = self._pending, []
        for image_id, fut in pending:
            try:
                fut.result()
            except Exception as e:  # noqa: BLE001 - stale records are acceptable
                self._log(
                    {"kind": "inpaint_error", "image": image_id, "error": str(e)}
                )

    def _inpaint_snapshot(self) -> list[dict]:
        if not self.cfg.enable_inpaint:
            return []
        records = self.store.snapshot()
        labeled_names = {self.train_ds.image_id(i) for i in self.labeled_ids}
        bad = [r["source_id"] for r in records if r["source_id"] in labeled_names]
        if bad:
            raise RuntimeError(f"inpainted records for labeled images: {bad}")
        return records

    # ------------------------------------------------------------------
    # epochs

    def run_epoch(self) -> dict:
        cfg = self.cfg
        epoch = self.epoch
        self._drain_inpaint_jobs()
        snapshot = self._inpaint_snapshot()
        if cfg.enable_inpaint and cfg.inpaint_period > 0 and epoch % cfg.inpaint_period == 0:
            self.inpaint_refresh(epoch)

        labeled_order = self.data_rng.permutation(self.labeled_ids)
        unlabeled_pool = (
            self.data_rng.permutation(self.unlabeled_ids).tolist()
            if (cfg.enable_unlabeled and self.unlabeled_ids)
            else []
        )
        steps = max(1, math.ceil(len(labeled_order) / cfg.batch_labeled))
        step_metrics = []
        u_cursor = 0
        for step in range(steps):
            lab_idx = labeled_order[
                step * cfg.batch_labeled : (step + 1) * cfg.batch_labeled
            ]
            if len(lab_idx) == 0:
                break
            labeled = self._labeled_views(lab_idx, epoch, step)

            n_inp = 0
            if cfg.enable_inpaint and snapshot:
                n_inp = min(math.ceil(cfg.batch_unlabeled / 2), len(snapshot))
            n_raw = cfg.batch_unlabeled - n_inp if unlabeled_pool else 0

            unlabeled = None
            if n_raw > 0:
                chosen = []
                for _ in range(n_raw):
                    if u_cursor >= len(unlabeled_pool):
                        unlabeled_pool = self.data_rng.permutation(
                            self.unlabeled_ids
                        ).tolist()
                        u_cursor = 0
                    chosen.append(unlabeled_pool[u_cursor])
                    u_cursor += 1
                images = [self.train_ds.load_image(i) for i in chosen]
                unlabeled = self._pair_views(images, epoch, step, 1)

            inpainted = None
            if n_inp > 0:
                picks = self.data_rng.integers(0, len(snapshot), size=n_inp)
                images = [snapshot[int(k)]["image"] for k in picks]
                inpainted = self._pair_views(images, epoch, step, 2)

            metrics = self.train_step(labeled, unlabeled, inpainted, epoch)
            metrics.update({"kind": "step", "epoch": epoch, "step": step})
            self._log(metrics)
            step_metrics.append(metrics)

        summary = {
            "kind": "epoch",
            "epoch": epoch,
            "lambda_w": warmup_weight(epoch, cfg.loss.warmup_epochs),
            "omega": level_weights(
                epoch, cfg.max_level, cfg.inpaint_weight_decay
            ).tolist(),
            "inpaint_records": len(snapshot),
        }
        for key in ("loss_total", "loss_reg", "loss_cls", "loss_u", "loss_inp"):
            summary[key] = float(np.mean([m[key] for m in step_metrics]))
        self.epoch += 1
        return summary

    def fit(self) -> list[dict]:
        cfg = self.cfg
        while self.epoch < cfg.epochs:
            summary = self.run_epoch()
            is_last = self.epoch == cfg.epochs
            if self.val_ds is not None and (
                is_last or (cfg.eval_every and self.epoch % cfg.eval_every == 0)
            ):
                result = evaluate(self.teacher, self.val_ds)
                summary["val_mae"] = result.mae
                summary["val_rmse"] = result.rmse
            self._log(summary)
            self.history.append(summary)
        self._drain_inpaint_jobs()
        return self.history

    # ------------------------------------------------------------------
    # checkpointing

    def save(self, path: str | Path) -> None:
        # drain so the on-disk inpaint store is consistent with the snapshot
        self._drain_inpaint_jobs()
        save_checkpoint(
            path,
            config_digest=config_digest(self.cfg),
            epoch=self.epoch,
            student=self.student.state_dict(),
            teacher=self.teacher.state_dict(),
            optimizer=self.optimizer.state_dict(),
            torch_rng=torch.get_rng_state(),
            data_rng=self.data_rng.bit_generator.state,
            history=self.history,
        )

    def load(self, path: str | Path) -> None:
        state = load_checkpoint(path, expected_digest=config_digest(self.cfg))
        self.student.load_state_dict(state["student"])
        self.teacher.load_state_dict(state["teacher"])
        self.optimizer.load_state_dict(state["optimizer"])
        torch.set_rng_state(state["torch_rng"])
        self.data_rng.bit_generator.state = state["data_rng"]
        self.epoch = state["epoch"]
        self.history = list(state["history"])

    def close(self) -> None:
        self._drain_inpaint_jobs()
        self._executor.shutdown(wait=True)
