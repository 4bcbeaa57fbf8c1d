"""Online tracking loop: per-frame ROI, compression through the adapted
expert, channel-pruned windowed responses, validation-weighted fusion,
sub-pixel localization, scale search, filter updates, and full-occlusion
re-detection.

Motion decoding: the response orientation of cf.py places the peak at
(center - displacement), so displacements are decoded as center minus the
sub-pixel peak before being scaled from feature cells to ROI pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import adapt, autoencoder, cf, context, numerics
from .config import PipelineConfig
from .features import (
    BoundingBox,
    FeatureSource,
    _as_rgb_frame,
    augment_initial,
    extract_roi,
)


@dataclass
class OcclusionState:
    """Bookkeeping for the frozen re-detection filter bank."""

    active: bool = False
    frames_left: int = 0
    saved_bank: cf.FilterBank | None = None
    saved_scale: float = 1.0
    saved_box: BoundingBox | None = None


@dataclass
class TrackerState:
    target: BoundingBox
    roi_box: BoundingBox
    bank: cf.FilterBank
    kept: adapt.ChannelRanking
    expert: autoencoder.AutoEncoderModel
    scale: float = 1.0
    rmax_avg: float = 0.0
    occlusion: OcclusionState = field(default_factory=OcclusionState)


@dataclass
class TrackerModels:
    """Pretrained bundle consumed by the tracker."""

    base: autoencoder.AutoEncoderModel
    experts: list
    selector: context.SelectorNetwork


class StepResult(NamedTuple):
    box: BoundingBox
    r_max: float
    occluded: bool


def feature_box(target: BoundingBox, roi: BoundingBox, size: int) -> BoundingBox:
    """Map an image-space box into feature-grid coordinates of its ROI,
    rounded outward to whole cells."""
    x0 = (target.x - roi.x) * size / roi.w
    y0 = (target.y - roi.y) * size / roi.h
    x1 = (target.x + target.w - roi.x) * size / roi.w
    y1 = (target.y + target.h - roi.y) * size / roi.h
    x0, y0 = np.floor(x0), np.floor(y0)
    x1, y1 = np.ceil(x1), np.ceil(y1)
    return BoundingBox(float(x0), float(y0), float(max(x1 - x0, 1.0)), float(max(y1 - y0, 1.0)))


def occlusion_update(
    occ: OcclusionState,
    rmax_avg: float,
    r_max: float,
    snapshot,
    lambda_re: float,
    n_redetect: int,
    gamma: float,
    enabled: bool = True,
):
    """Advance the occlusion state machine for one frame.

    `snapshot` is a callable returning (bank, scale, box) captured at the
    previous frame, invoked only when a drop triggers. The running response
    average is frozen while re-detection is active (including the trigger
    frame) so occluded responses cannot drag the baseline down.
    Returns (new_occlusion_state, new_rmax_avg).
    """
    if r_max < 0:
        raise ValueError("r_max must be >= 0")
    if occ.active:
        left = occ.frames_left - 1
        if left <= 0:
            return OcclusionState(), rmax_avg
        return OcclusionState(
            active=True,
            frames_left=left,
            saved_bank=occ.saved_bank,
            saved_scale=occ.saved_scale,
            saved_box=occ.saved_box,
        ), rmax_avg
    if enabled and r_max < lambda_re * rmax_avg:
        bank, scale, box = snapshot()
        return OcclusionState(
            active=True,
            frames_left=n_redetect,
            saved_bank=bank,
            saved_scale=scale,
            saved_box=box,
        ), rmax_avg
    return OcclusionState(), (1.0 - gamma) * rmax_avg + gamma * r_max


class Tracker:
    """Single-target tracker; construct once per target, call init() on the
    first frame and step() on each following frame."""

    def __init__(
        self,
        models: TrackerModels,
        source: FeatureSource,
        cfg: PipelineConfig | None = None,
    ):
        self.models = models
        self.source = source
        self.cfg = cfg or PipelineConfig()
        self.state: TrackerState | None = None
        self._label = None
        self._label_spectrum = None
        self._window = None
        self._grid = 0

    # -- feature plumbing ---------------------------------------------------

    def _prepare_grid(self, size: int) -> None:
        if size == self._grid:
            return
        self._grid = size
        sigma = self.cfg.sigma_g * size
        self._label = numerics.gaussian_label(size, sigma)
        self._label_spectrum = numerics.fft2(self._label)
        self._window = numerics.cosine_window(size)

    def _channel_spectra(self, expert, patch) -> np.ndarray:
        """Spectra of the compressed, pruned, cosine-masked channel stack."""
        fmap = self.source.extract(patch)
        z = autoencoder.compress(expert, fmap)
        kept = z[:, :, self.state.kept.kept].astype(np.float64)
        channels = np.ascontiguousarray((kept * self._window[:, :, None]).transpose(2, 0, 1))
        return cf.spectra_of(channels)

    def _respond(self, bank: cf.FilterBank, channel_spectra: np.ndarray) -> cf.ResponseMap:
        planes = cf.response_from_spectra(bank.spectra, channel_spectra)
        sigma = self.cfg.sigma_g * self._grid
        scores = cf.validation_scores_stack(planes, sigma, self.cfg.lambda_s)
        return cf.integrate(planes, scores)

    def _decode_position(
        self, r: cf.ResponseMap, base: BoundingBox, roi: BoundingBox
    ) -> BoundingBox:
        if r.max_value <= 0.0:
            return base  # degenerate response; hold position
        px, py = cf.subpixel_peak(r)
        c = self._grid // 2
        dx = round((c - px) * roi.w / self._grid)
        dy = round((c - py) * roi.h / self._grid)
        return base.moved(dx, dy)

    # -- lifecycle ----------------------------------------------------------

    def init(self, frame: np.ndarray, target_box: BoundingBox) -> TrackerState:
        cfg = self.cfg
        frame = _as_rgb_frame(frame)
        patch = extract_roi(frame, target_box, cfg.roi_factor, cfg.input_size)
        fmap = self.source.extract(patch)
        self._prepare_grid(fmap.shape[0])

        # pick the expert whose context matches the target, then adapt it
        z_base = autoencoder.compress(self.models.base, fmap)
        descriptor = context.make_descriptor(z_base)
        choice, _probs = context.select(self.models.selector, descriptor)
        expert = self.models.experts[choice - 1]

        aug_maps = [self.source.extract(p) for p in augment_initial(patch)]
        acfg = adapt.AdaptationConfig(
            lambda_theta=cfg.lambda_theta,
            adapt_lr=cfg.adapt_lr,
            adapt_epochs=cfg.adapt_epochs,
            n_keep=cfg.n_keep,
            cf_lambda=cfg.cf_lambda,
        )
        expert = adapt.fine_tune_initial(expert, aug_maps, self._label, acfg)

        z_all = autoencoder.compress(expert, fmap)
        fbox = feature_box(target_box, patch.source_box, self._grid)
        n_keep = min(cfg.n_keep, z_all.shape[2])
        kept = adapt.background_channel_removal(z_all, fbox, n_keep)

        self.state = TrackerState(
            target=target_box,
            roi_box=patch.source_box,
            bank=cf.FilterBank(
                spectra=np.zeros((n_keep, self._grid, self._grid), dtype=np.complex128),
                label=self._label,
                lam=cfg.cf_lambda,
                gamma=cfg.gamma,
            ),
            kept=kept,
            expert=expert,
        )
        zf = self._channel_spectra(expert, patch)
        self.state.bank = cf.FilterBank(
            spectra=cf.estimate_from_spectra(zf, self._label_spectrum, cfg.cf_lambda),
            label=self._label,
            lam=cfg.cf_lambda,
            gamma=cfg.gamma,
        )
        first = self._respond(self.state.bank, zf)
        self.state.rmax_avg = first.max_value
        return self.state

    def step(self, frame: np.ndarray) -> StepResult:
        if self.state is None:
            raise RuntimeError("init() must run before step()")
        cfg = self.cfg
        st = self.state
        frame = _as_rgb_frame(frame)
        prev_bank = st.bank
        prev_scale = st.scale
        prev_box = st.target

        # search around the previous position with the previous ROI geometry
        patch = extract_roi(frame, st.target, cfg.roi_factor, cfg.input_size)
        zf = self._channel_spectra(st.expert, patch)
        live = self._respond(st.bank, zf)
        r_max = live.max_value
        new_box = self._decode_position(live, st.target, patch.source_box)

        # while re-detection is active, the frozen bank watches the position
        # where the target vanished and wins whenever its response is stronger
        if st.occlusion.active:
            saved_patch = extract_roi(
                frame, st.occlusion.saved_box, cfg.roi_factor, cfg.input_size
            )
            saved_zf = self._channel_spectra(st.expert, saved_patch)
            recovered = self._respond(st.occlusion.saved_bank, saved_zf)
            if recovered.max_value > live.max_value:
                base = st.occlusion.saved_box
                new_box = self._decode_position(
                    recovered, base, saved_patch.source_box
                )
                st.bank = st.occlusion.saved_bank.copy()
                st.scale = st.occlusion.saved_scale
                r_max = recovered.max_value

        st.target = new_box

        # scale search at the new position; when the target did not move and
        # the bank was not swapped, the unit candidate equals the ROI just
        # searched, so its response can be reused verbatim
        reuse = None
        if new_box == prev_box and st.bank is prev_bank:
            reuse = (patch.source_box, zf, live)
        chosen, train_zf, train_roi = self._scale_search(frame, reuse)
        if chosen != 1.0:
            st.target = st.target.scaled_about_center(chosen)
            st.scale *= chosen

        # fresh filters from the winning candidate update the live bank
        if cfg.update_during_occlusion or not st.occlusion.active:
            fresh = cf.estimate_from_spectra(
                train_zf, self._label_spectrum, cfg.cf_lambda
            )
            st.bank = cf.update_bank(st.bank, fresh)

        st.occlusion, st.rmax_avg = occlusion_update(
            st.occlusion,
            st.rmax_avg,
            r_max,
            snapshot=lambda: (prev_bank.copy(), prev_scale, prev_box),
            lambda_re=cfg.lambda_re,
            n_redetect=cfg.n_redetect,
            gamma=cfg.gamma,
            enabled=cfg.redetect_enabled,
        )
        st.roi_box = train_roi
        return StepResult(box=st.target, r_max=r_max, occluded=st.occlusion.active)

    def _scale_search(self, frame: np.ndarray, reuse=None):
        """Try unit, grown, and shrunk ROIs at the current position; the
        largest fused response wins, with ties keeping the unit scale.
        `reuse` optionally carries (roi_box, spectra, response) valid for the
        unit candidate. Returns (factor, winning spectra, winning ROI box)."""
        cfg = self.cfg
        st = self.state
        factors = (1.0, cfg.scale_step, 1.0 / cfg.scale_step)
        best = None
        for f in factors:
            if f == 1.0 and reuse is not None:
                roi_box, zf, r = reuse
            else:
                box = st.target.scaled_about_center(f) if f != 1.0 else st.target
                patch = extract_roi(frame, box, cfg.roi_factor, cfg.input_size)
                roi_box = patch.source_box
                zf = self._channel_spectra(st.expert, patch)
                r = self._respond(st.bank, zf)
            if best is None or r.max_value > best[0]:
                best = (r.max_value, f, zf, roi_box)
        return best[1], best[2], best[3]
