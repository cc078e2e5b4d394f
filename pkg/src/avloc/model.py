"""The assembled localization network: encoders -> enhancement -> cross
reconstruction -> frame classifiers -> boundary modules, with a hand-written
backward pass for the composite training loss and directory checkpoints.

The training loss has three terms (frame BCE, boundary-map MSE, contrastive);
the cross-attention reconstruction path is used at inference to produce
anomaly scores but carries no loss term of its own, so its projections keep
their initial values while the features feeding them train.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .core import FeatureSequence, Modality, PipelineConfig
from .cratrans import (
    ExpSaturation,
    ReconstructionResult,
    anomaly_scores,
    contrastive_backward,
    contrastive_forward,
    cratrans_backward,
    cratrans_forward,
    init_cratrans_params,
)
from .dataio import (
    DataFormatError,
    load_feature_tensor,
    read_json,
    save_feature_tensor,
    write_json,
)
from .encoders import RawModalitySequence, encoder_backward, encoder_forward, init_encoder_params
from .heads import (
    BoundaryMap,
    FrameProbabilities,
    TrainingTargets,
    VideoDecision,
    scatter_cells,
    boundary_backward,
    boundary_forward,
    classifier_backward,
    classifier_forward,
    composite_loss,
    enhance_backward,
    enhance_forward,
    init_boundary_params,
    init_classifier_params,
    init_enhance_params,
    video_head,
)
from .tensorops import ParamSet, ShapeError

CHECKPOINT_MANIFEST = "checkpoint.json"
_COMPONENT_SEEDS = {
    "enc_v": 11,
    "enc_a": 23,
    "enh_v": 37,
    "enh_a": 41,
    "cra_v": 53,
    "cra_a": 67,
    "clf_v": 71,
    "clf_a": 79,
    "bnd_v": 83,
    "bnd_a": 97,
}


@dataclass
class InferenceResult:
    frame_probs_visual: FrameProbabilities
    frame_probs_audio: FrameProbabilities
    fused_frame_scores: np.ndarray
    maps_visual: tuple[BoundaryMap, BoundaryMap, BoundaryMap]
    maps_audio: tuple[BoundaryMap, BoundaryMap, BoundaryMap]
    recon_visual: ReconstructionResult
    recon_audio: ReconstructionResult
    anomaly: np.ndarray
    decision: VideoDecision


class ForgeryLocalizationModel:
    """All parameter sets plus the composed forward/backward passes."""

    def __init__(
        self,
        config: PipelineConfig,
        visual_dim: int,
        audio_dim: int,
        params: dict[str, ParamSet] | None = None,
        calibration_tau: float = 1.0,
    ):
        self.config = config
        self.visual_dim = int(visual_dim)
        self.audio_dim = int(audio_dim)
        self.calibration_tau = float(calibration_tau)
        if params is not None:
            self.params = params
        else:
            cf = config.feature_dim
            base = config.rng_seed * 1009
            seed = {k: base + off for k, off in _COMPONENT_SEEDS.items()}
            self.params = {
                "enc_v": init_encoder_params(visual_dim, cf, seed["enc_v"]),
                "enc_a": init_encoder_params(audio_dim, cf, seed["enc_a"]),
                "enh_v": init_enhance_params(cf, seed["enh_v"]),
                "enh_a": init_enhance_params(cf, seed["enh_a"]),
                "cra_v": init_cratrans_params(cf, seed["cra_v"]),
                "cra_a": init_cratrans_params(cf, seed["cra_a"]),
                "clf_v": init_classifier_params(cf, seed["clf_v"]),
                "clf_a": init_classifier_params(cf, seed["clf_a"]),
                "bnd_v": init_boundary_params(cf + 1, config.boundary_hidden_dims, seed["bnd_v"]),
                "bnd_a": init_boundary_params(cf + 1, config.boundary_hidden_dims, seed["bnd_a"]),
            }

    @property
    def calibration(self) -> ExpSaturation:
        return ExpSaturation(self.calibration_tau)

    def named_parameters(self):
        for comp in sorted(self.params):
            pset = self.params[comp]
            for name, tensor in pset.items():
                yield f"{comp}.{name}", tensor

    # -- forward ----------------------------------------------------------

    def _forward(self, raw_v: RawModalitySequence, raw_a: RawModalitySequence):
        cfg = self.config
        zv0, enc_v_cache = encoder_forward(raw_v, self.params["enc_v"], cfg.num_frames)
        za0, enc_a_cache = encoder_forward(raw_a, self.params["enc_a"], cfg.num_frames)
        zv, enh_v_cache = enhance_forward(zv0, self.params["enh_v"])
        za, enh_a_cache = enhance_forward(za0, self.params["enh_a"])
        cra_out, cra_cache = cratrans_forward(
            zv, za, self.params["cra_v"], self.params["cra_a"], cfg.attention_heads
        )
        probs_v, logits_v, clf_v_cache = classifier_forward(zv, self.params["clf_v"])
        probs_a, logits_a, clf_a_cache = classifier_forward(za, self.params["clf_a"])
        bnd_v_out, bnd_v_cache = boundary_forward(
            zv, probs_v, self.params["bnd_v"], cfg.boundary_samples, cfg.num_frames
        )
        bnd_a_out, bnd_a_cache = boundary_forward(
            za, probs_a, self.params["bnd_a"], cfg.boundary_samples, cfg.num_frames
        )
        return {
            "zv": zv,
            "za": za,
            "cra_out": cra_out,
            "probs_v": probs_v,
            "probs_a": probs_a,
            "logits_v": logits_v,
            "logits_a": logits_a,
            "bnd_v_out": bnd_v_out,
            "bnd_a_out": bnd_a_out,
            "caches": {
                "enc_v": enc_v_cache,
                "enc_a": enc_a_cache,
                "enh_v": enh_v_cache,
                "enh_a": enh_a_cache,
                "cra": cra_cache,
                "clf_v": clf_v_cache,
                "clf_a": clf_a_cache,
                "bnd_v": bnd_v_cache,
                "bnd_a": bnd_a_cache,
            },
        }

    def _loss_pieces(self, state, targets: TrainingTargets):
        cfg = self.config
        fp_v = FrameProbabilities(Modality.VISUAL, state["probs_v"])
        fp_a = FrameProbabilities(Modality.AUDIO, state["probs_a"])
        t = cfg.num_frames
        map_v = BoundaryMap(
            Modality.VISUAL,
            scatter_cells(state["bnd_v_out"]["values_fused"], state["bnd_v_out"]["cells"], t, t),
            state["bnd_v_out"]["valid"],
        )
        map_a = BoundaryMap(
            Modality.AUDIO,
            scatter_cells(state["bnd_a_out"]["values_fused"], state["bnd_a_out"]["cells"], t, t),
            state["bnd_a_out"]["valid"],
        )
        total, breakdown = composite_loss(
            fp_v, fp_a, map_v, map_a, state["cra_out"]["h_v"], state["cra_out"]["h_a"], targets, cfg
        )
        return total, breakdown

    def loss(self, raw_v, raw_a, targets: TrainingTargets):
        state = self._forward(raw_v, raw_a)
        total, breakdown = self._loss_pieces(state, targets)
        return total, breakdown

    # -- backward ---------------------------------------------------------

    def loss_and_grads(self, raw_v, raw_a, targets: TrainingTargets):
        """Composite loss, per-term breakdown, and gradients for every
        parameter, keyed as "component.name"."""
        cfg = self.config
        state = self._forward(raw_v, raw_a)
        total, breakdown = self._loss_pieces(state, targets)
        t = cfg.num_frames
        grads: dict[str, np.ndarray] = {}

        # boundary term: masked MSE on fused-map cells, averaged over the
        # valid cells of both modalities jointly
        n_cells_v = state["bnd_v_out"]["cells"].shape[0]
        n_cells_a = state["bnd_a_out"]["cells"].shape[0]
        n_cells_total = n_cells_v + n_cells_a
        d_z = {}
        d_probs_bnd = {}
        for mod, gt_map in (("v", targets.iou_map_visual), ("a", targets.iou_map_audio)):
            out = state[f"bnd_{mod}_out"]
            cells = out["cells"]
            gt_cells = gt_map[cells[:, 0], cells[:, 1] - 1]
            vals = out["values_fused"]
            d_vals = cfg.boundary_loss_weight * 2.0 * (vals - gt_cells) / n_cells_total
            d_logits_fused = d_vals * vals * (1.0 - vals)
            dz_bnd, dp_bnd, bnd_grads = boundary_backward(
                d_logits_fused, state["caches"][f"bnd_{mod}"]
            )
            for name, g in bnd_grads.items():
                grads[f"bnd_{mod}.{name}"] = g
            d_z[mod] = dz_bnd
            d_probs_bnd[mod] = dp_bnd

        # frame term: mean BCE over frames and modalities
        for mod, labels in (("v", targets.frame_labels_visual), ("a", targets.frame_labels_audio)):
            probs = state[f"probs_{mod}"]
            d_logits = cfg.frame_loss_weight * 0.5 * (probs - labels) / t
            d_logits = d_logits + d_probs_bnd[mod] * probs * (1.0 - probs)
            dz_clf, clf_grads = classifier_backward(d_logits, state["caches"][f"clf_{mod}"])
            for name, g in clf_grads.items():
                grads[f"clf_{mod}.{name}"] = g
            d_z[mod] = d_z[mod] + dz_clf

        # contrastive term on the self-attended embeddings
        _, con_cache = contrastive_forward(
            state["cra_out"]["h_v"],
            state["cra_out"]["h_a"],
            targets.fake_union,
            cfg.contrastive_margin,
        )
        d_h_v, d_h_a = contrastive_backward(con_cache)
        w = cfg.contrastive_loss_weight
        cra_v_grads, cra_a_grads, d_zv_cra, d_za_cra = cratrans_backward(
            state["caches"]["cra"], d_h_v=w * d_h_v, d_h_a=w * d_h_a
        )
        for name, g in cra_v_grads.items():
            grads[f"cra_v.{name}"] = g
        for name, g in cra_a_grads.items():
            grads[f"cra_a.{name}"] = g
        d_z["v"] = d_z["v"] + d_zv_cra
        d_z["a"] = d_z["a"] + d_za_cra

        # enhancement and encoders
        for mod in ("v", "a"):
            d_z0, enh_grads = enhance_backward(d_z[mod], state["caches"][f"enh_{mod}"])
            for name, g in enh_grads.items():
                grads[f"enh_{mod}.{name}"] = g
            enc_grads = encoder_backward(d_z0, state["caches"][f"enc_{mod}"])
            for name, g in enc_grads.items():
                grads[f"enc_{mod}.{name}"] = g

        # parameters outside the loss (cross-attention projections) get
        # explicit zero gradients so optimizers and checks see every name
        for full_name, tensor in self.named_parameters():
            if full_name not in grads:
                grads[full_name] = np.zeros_like(tensor)
        return total, breakdown, grads

    # -- inference --------------------------------------------------------

    def infer(self, raw_v: RawModalitySequence, raw_a: RawModalitySequence) -> InferenceResult:
        cfg = self.config
        state = self._forward(raw_v, raw_a)
        t = cfg.num_frames
        cra = state["cra_out"]
        recon_v = ReconstructionResult(
            FeatureSequence(Modality.VISUAL, cra["hat_v"]), cra["weights_v"], cra["err_v"]
        )
        recon_a = ReconstructionResult(
            FeatureSequence(Modality.AUDIO, cra["hat_a"]), cra["weights_a"], cra["err_a"]
        )
        anomaly = anomaly_scores(cra["err_v"], cra["err_a"], self.calibration)

        def maps_for(mod: str, modality: Modality):
            out = state[f"bnd_{mod}_out"]
            return tuple(
                BoundaryMap(
                    modality, scatter_cells(out[f"values_{kind}"], out["cells"], t, t), out["valid"]
                )
                for kind in ("pos", "chan", "fused")
            )

        maps_v = maps_for("v", Modality.VISUAL)
        maps_a = maps_for("a", Modality.AUDIO)
        fused_scores = 0.5 * (state["probs_v"] + state["probs_a"])
        combined = BoundaryMap(
            Modality.FUSED,
            np.maximum(maps_v[2].scores, maps_a[2].scores),
            maps_v[2].valid,
        )
        decision = video_head(fused_scores, combined)
        return InferenceResult(
            frame_probs_visual=FrameProbabilities(Modality.VISUAL, state["probs_v"]),
            frame_probs_audio=FrameProbabilities(Modality.AUDIO, state["probs_a"]),
            fused_frame_scores=fused_scores,
            maps_visual=maps_v,
            maps_audio=maps_a,
            recon_visual=recon_v,
            recon_audio=recon_a,
            anomaly=anomaly,
            decision=decision,
        )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _config_to_json(config: PipelineConfig) -> dict:
    out = {}
    for f in fields(config):
        value = getattr(config, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def _config_from_json(data: dict) -> PipelineConfig:
    data = dict(data)
    if "boundary_hidden_dims" in data:
        data["boundary_hidden_dims"] = tuple(data["boundary_hidden_dims"])
    return PipelineConfig(**data)


def save_checkpoint(model: ForgeryLocalizationModel, path: str | Path) -> None:
    """Serialize all parameter sets (float64) plus a manifest of names/shapes."""
    path = Path(path)
    params_dir = path / "params"
    params_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for full_name, tensor in model.named_parameters():
        file_name = full_name + ".bin"
        save_feature_tensor(params_dir / file_name, tensor, dtype="float64")
        entries.append(
            {
                "name": full_name,
                "file": f"params/{file_name}",
                "rows": int(tensor.shape[0]),
                "cols": int(tensor.shape[1]),
            }
        )
    manifest = {
        "format_version": 1,
        "config": _config_to_json(model.config),
        "visual_dim": model.visual_dim,
        "audio_dim": model.audio_dim,
        "calibration_tau": model.calibration_tau,
        "params": entries,
    }
    write_json(path / CHECKPOINT_MANIFEST, manifest)


def load_checkpoint(
    path: str | Path, config: PipelineConfig | None = None
) -> ForgeryLocalizationModel:
    """Rebuild a model from a checkpoint directory.

    When a config is supplied it must be shape-compatible with the stored
    parameters (feature_dim, boundary_hidden_dims, attention_heads); other
    fields (thresholds, learning rate, frame count) may differ.
    """
    path = Path(path)
    manifest_path = path / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise DataFormatError(f"not a checkpoint directory: {path}")
    manifest = read_json(manifest_path)
    stored_config = _config_from_json(manifest["config"])
    if config is not None:
        for field_name in ("feature_dim", "boundary_hidden_dims", "attention_heads"):
            if getattr(config, field_name) != getattr(stored_config, field_name):
                raise ShapeError(
                    f"checkpoint is incompatible with the supplied config: "
                    f"{field_name} is {getattr(stored_config, field_name)} in the checkpoint "
                    f"but {getattr(config, field_name)} in the config"
                )
    use_config = config if config is not None else stored_config
    grouped: dict[str, dict[str, np.ndarray]] = {}
    for entry in manifest["params"]:
        tensor = load_feature_tensor(path / entry["file"])
        if tensor.shape != (entry["rows"], entry["cols"]):
            raise DataFormatError(
                f"{entry['file']}: shape {tensor.shape} does not match manifest "
                f"({entry['rows']}, {entry['cols']})"
            )
        comp, name = entry["name"].split(".", 1)
        grouped.setdefault(comp, {})[name] = tensor
    params = {comp: ParamSet(tensors) for comp, tensors in grouped.items()}
    return ForgeryLocalizationModel(
        config=use_config,
        visual_dim=int(manifest["visual_dim"]),
        audio_dim=int(manifest["audio_dim"]),
        params=params,
        calibration_tau=float(manifest["calibration_tau"]),
    )
