from __future__ import annotations

from typing import Any, Dict

from rest_framework import serializers

from . import constants
from .services.functions import ACTIVATIONS, CLASSIFIERS
from .services.harness import PROFILES


class StrictSerializer(serializers.Serializer):
    """Rejects keys the serializer does not declare."""

    def to_internal_value(self, data: Any) -> Dict[str, Any]:
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["Unknown key."] for key in unknown})
        return super().to_internal_value(data)


def _positive_list(length: int, default):
    return serializers.ListField(
        child=serializers.FloatField(),
        min_length=length,
        max_length=length,
        required=False,
        default=list(default),
    )


class ModelConfigSerializer(StrictSerializer):
    activation = serializers.ChoiceField(choices=sorted(ACTIVATIONS), default=constants.DEFAULT_ACTIVATION)
    classifier = serializers.ChoiceField(choices=sorted(CLASSIFIERS), default=constants.DEFAULT_CLASSIFIER)
    alphas = _positive_list(4, constants.DEFAULT_ALPHAS)
    taus = _positive_list(2, constants.DEFAULT_TAUS)

    def _strictly_positive(self, value):
        if any(v <= 0 for v in value):
            raise serializers.ValidationError("All weights must be strictly positive.")
        return value

    def validate_alphas(self, value):
        return self._strictly_positive(value)

    def validate_taus(self, value):
        return self._strictly_positive(value)


class OptimizerConfigSerializer(StrictSerializer):
    method = serializers.ChoiceField(choices=list(constants.OPTIMIZE_METHODS), default=constants.DEFAULT_OPTIMIZE_METHOD)
    max_iters = serializers.IntegerField(min_value=0, default=constants.DEFAULT_MAX_ITERS)
    grad_tol = serializers.FloatField(min_value=0.0, default=constants.DEFAULT_GRAD_TOL)
    armijo_c1 = serializers.FloatField(min_value=0.0, max_value=1.0, default=constants.DEFAULT_ARMIJO_C1)
    backtrack = serializers.FloatField(min_value=0.0, max_value=1.0, default=constants.DEFAULT_BACKTRACK)
    initial_step = serializers.FloatField(min_value=0.0, default=constants.DEFAULT_INITIAL_STEP)
    step_growth = serializers.FloatField(min_value=1.0, default=constants.DEFAULT_STEP_GROWTH)
    momentum = serializers.FloatField(min_value=0.0, max_value=1.0, default=constants.DEFAULT_MOMENTUM)
    max_backtracks = serializers.IntegerField(min_value=1, default=constants.DEFAULT_MAX_BACKTRACKS)
    multistart = serializers.IntegerField(min_value=1, default=constants.DEFAULT_MULTISTART)

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        for key in ("grad_tol", "initial_step", "armijo_c1", "backtrack"):
            if attrs[key] <= 0:
                raise serializers.ValidationError({key: ["Must be strictly positive."]})
        for key in ("armijo_c1", "backtrack", "momentum"):
            if attrs[key] >= 1:
                raise serializers.ValidationError({key: ["Must be less than 1."]})
        return attrs


class SolverConfigSerializer(StrictSerializer):
    method = serializers.ChoiceField(choices=list(constants.SOLVER_METHODS), default=constants.DEFAULT_SOLVER_METHOD)
    steps = serializers.IntegerField(min_value=1, default=constants.DEFAULT_SOLVER_STEPS)


class LadderConfigSerializer(StrictSerializer):
    n_values = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=1, default=list(constants.DEFAULT_N_VALUES)
    )
    continuum_nodes = serializers.IntegerField(min_value=2, default=constants.DEFAULT_CONTINUUM_NODES)
    warm_start = serializers.BooleanField(default=True)
    continuum_method = serializers.ChoiceField(
        choices=list(constants.OPTIMIZE_METHODS), default=constants.DEFAULT_CONTINUUM_METHOD
    )
    continuum_max_iters = serializers.IntegerField(min_value=1, default=constants.DEFAULT_CONTINUUM_MAX_ITERS)

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        ns = attrs["n_values"]
        if any(b < a for a, b in zip(ns, ns[1:])):
            raise serializers.ValidationError({"n_values": ["Must be increasing."]})
        if attrs["continuum_nodes"] < max(ns) + 1:
            raise serializers.ValidationError({"continuum_nodes": [f"Must be at least max(n_values) + 1 = {max(ns) + 1}."]})
        return attrs


class TrainConfigSerializer(StrictSerializer):
    n = serializers.IntegerField(min_value=1, default=constants.DEFAULT_TRAIN_N)
    continuum_nodes = serializers.IntegerField(min_value=2, default=constants.DEFAULT_CONTINUUM_NODES)


class ProbeProfileSerializer(StrictSerializer):
    profile = serializers.ChoiceField(choices=sorted(PROFILES))
    scale = serializers.FloatField(default=1.0)


class ProbeConfigSerializer(StrictSerializer):
    d = serializers.IntegerField(min_value=1, default=1)
    nodes = serializers.IntegerField(min_value=2, default=1025)
    K = ProbeProfileSerializer(required=False, default={"profile": "sin", "scale": 1.0})
    b = ProbeProfileSerializer(required=False, default={"profile": "linear", "scale": 0.3})
    x = serializers.ListField(child=serializers.FloatField(), required=False, default=None, allow_null=True)
    n_values = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=1, default=[8, 16, 32, 64, 128, 256]
    )
    recovery_n_values = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=1, default=[4, 8, 16, 32, 64, 128, 256]
    )

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        if attrs.get("x") is not None and len(attrs["x"]) != attrs["d"]:
            raise serializers.ValidationError({"x": [f"Must have length d = {attrs['d']}."]})
        return attrs


class GradCheckConfigSerializer(StrictSerializer):
    n = serializers.IntegerField(min_value=1, default=16)
    d = serializers.IntegerField(min_value=1, default=2)
    m = serializers.IntegerField(min_value=1, default=1)
    samples = serializers.IntegerField(min_value=1, default=4)
    instances = serializers.IntegerField(min_value=1, default=10)
    directions = serializers.IntegerField(min_value=1, default=20)
    steps = serializers.ListField(
        child=serializers.FloatField(), min_length=2, default=list(constants.DEFAULT_FD_STEPS)
    )
    continuum_nodes = serializers.IntegerField(min_value=0, default=0)

    def validate_steps(self, value):
        if any(r <= 0 for r in value) or any(b >= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("Steps must be positive and decreasing.")
        return value


class MorreyConfigSerializer(StrictSerializer):
    count = serializers.IntegerField(min_value=1, default=1000)
    max_n = serializers.IntegerField(min_value=1, default=64)
    max_d = serializers.IntegerField(min_value=1, default=4)


class RateFitConfigSerializer(StrictSerializer):
    source = serializers.CharField(allow_blank=True, default="")
    n_column = serializers.CharField(default="n")
    value_column = serializers.CharField(default="distance")


class RunConfigSerializer(StrictSerializer):
    SECTIONS = {
        "model": ModelConfigSerializer,
        "optimizer": OptimizerConfigSerializer,
        "solver": SolverConfigSerializer,
        "ladder": LadderConfigSerializer,
        "train": TrainConfigSerializer,
        "probe": ProbeConfigSerializer,
        "grad_check": GradCheckConfigSerializer,
        "morrey": MorreyConfigSerializer,
        "rate_fit": RateFitConfigSerializer,
    }

    experiment = serializers.CharField(max_length=128, default="run")
    data_path = serializers.CharField(allow_blank=True, default="")
    output_dir = serializers.CharField(allow_blank=True, default="")
    seed = serializers.IntegerField(min_value=0, max_value=2**64 - 1, default=0)
    threads = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)

    model = ModelConfigSerializer()
    optimizer = OptimizerConfigSerializer()
    solver = SolverConfigSerializer()
    ladder = LadderConfigSerializer()
    train = TrainConfigSerializer()
    probe = ProbeConfigSerializer()
    grad_check = GradCheckConfigSerializer()
    morrey = MorreyConfigSerializer()
    rate_fit = RateFitConfigSerializer()

    def to_internal_value(self, data: Any) -> Dict[str, Any]:
        if isinstance(data, dict):
            # absent sections still go through validation so their defaults resolve
            data = {**{name: {} for name in self.SECTIONS}, **data}
        return super().to_internal_value(data)
