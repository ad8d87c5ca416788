"""scikit-learn style wrappers around the refinement, tracking and trajectory steps.

The inputs are reconstructions and mask sequences rather than feature
matrices, so these classes follow the estimator conventions (constructor
hyper-parameters, ``get_params``/``set_params``, ``fit`` returning ``self``,
fitted attributes with a trailing underscore) without being usable inside
sklearn pipelines or grid searches over array data.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import (
    check_choice,
    check_fraction,
    check_non_negative_int,
    check_positive,
    check_reconstruction,
    check_sequence_lengths,
)
from .recon import pair_frames
from .refine import HUBER_WIDTH, Y_TOLERANCE, SolverConfig, refine_reconstruction
from .tracking import track_sequence
from .trajectory import compose_trajectory


def _check_fitted(est, attr: str) -> None:
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class StereoRefiner(TransformerMixin, BaseEstimator):
    """Rescale a reconstruction to the nominal baseline and refine it under the rig constraint."""

    def __init__(self, nominal_baseline=1.0, y_tolerance=Y_TOLERANCE, huber_width=HUBER_WIDTH, max_iterations=100):
        self.nominal_baseline = nominal_baseline
        self.y_tolerance = y_tolerance
        self.huber_width = huber_width
        self.max_iterations = max_iterations

    def _refine(self, X):
        check_reconstruction(X)
        check_positive("nominal_baseline", self.nominal_baseline)
        check_positive("y_tolerance", self.y_tolerance)
        check_positive("huber_width", self.huber_width)
        solver = SolverConfig(max_iterations=check_non_negative_int("max_iterations", self.max_iterations))
        return refine_reconstruction(
            X, self.nominal_baseline, y_tolerance=self.y_tolerance, huber_width=self.huber_width, solver=solver
        )

    def fit(self, X, y=None):
        self.reconstruction_, self.report_ = self._refine(X)
        self.scale_ = self.report_.scale_factor
        self._fitted_input = X
        return self

    def transform(self, X):
        _check_fitted(self, "reconstruction_")
        if X is self._fitted_input:
            return self.reconstruction_
        return self._refine(X)[0]


class StereoMaskTracker(BaseEstimator):
    """Temporal and stereo mask association over a detection sequence."""

    def __init__(self, min_overlap=0.3, max_lost=2, overlap_mode="iou"):
        self.min_overlap = min_overlap
        self.max_lost = max_lost
        self.overlap_mode = overlap_mode

    def fit(self, dets_left, dets_right, flows_ln, flows_lr, first_frame=0):
        check_sequence_lengths(dets_left, dets_right, flows_ln, flows_lr)
        check_fraction("min_overlap", self.min_overlap)
        check_non_negative_int("max_lost", self.max_lost)
        check_choice("overlap_mode", self.overlap_mode, ("iou", "iop"))
        self.state_ = track_sequence(
            dets_left,
            dets_right,
            flows_ln,
            flows_lr,
            min_overlap=self.min_overlap,
            max_lost=self.max_lost,
            mode=self.overlap_mode,
            first_frame=first_frame,
        )
        self.tracks_ = self.state_.all_tracks()
        return self

    def predict(self, frame_index: int, side: str = "left") -> dict:
        """``track_id -> InstanceMask`` for one image of the fitted sequence."""
        _check_fitted(self, "tracks_")
        check_choice("side", side, ("left", "right"))
        out = {}
        for tid, track in self.tracks_.items():
            masks = track.left_masks if side == "left" else track.right_masks
            if frame_index in masks:
                out[tid] = masks[frame_index]
        return out


class TrajectoryReconstructor(BaseEstimator):
    """Refine object and background reconstructions and compose the object trajectory."""

    def __init__(self, nominal_baseline=1.0, refine=True, y_tolerance=Y_TOLERANCE, huber_width=HUBER_WIDTH):
        self.nominal_baseline = nominal_baseline
        self.refine = refine
        self.y_tolerance = y_tolerance
        self.huber_width = huber_width

    def fit(self, obj, bg):
        check_reconstruction(obj, "object")
        check_reconstruction(bg, "background")
        if self.refine:
            params = dict(nominal_baseline=self.nominal_baseline, y_tolerance=self.y_tolerance, huber_width=self.huber_width)
            self.object_refiner_ = StereoRefiner(**params).fit(obj)
            self.background_refiner_ = StereoRefiner(**params).fit(bg)
            obj, bg = self.object_refiner_.reconstruction_, self.background_refiner_.reconstruction_
        self.object_, self.background_ = obj, bg
        self.pairs_ = pair_frames(obj, bg)
        self.trajectory_ = compose_trajectory(obj, bg, self.pairs_)
        return self

    def predict(self, obj=None, bg=None):
        """The fitted trajectory, or the trajectory of a new pair of reconstructions."""
        if obj is None and bg is None:
            _check_fitted(self, "trajectory_")
            return self.trajectory_
        return self.fit(obj, bg).trajectory_
