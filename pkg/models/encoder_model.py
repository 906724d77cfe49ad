"""
Pydantic data models for the MLP encoder parameters and their gradients.
"""

from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class LayerParams(BaseModel):
    """One affine layer: weight (d_out x d_in) and bias (d_out,)."""

    model_config = ConfigDict(
        extra="forbid",
        arbitrary_types_allowed=True,
    )

    weight: np.ndarray = Field(description="Weight matrix of shape (d_out, d_in)")
    bias: np.ndarray = Field(description="Bias vector of shape (d_out,)")

    @field_validator("weight", "bias", mode="before")
    @classmethod
    def _as_float64(cls, value: object) -> np.ndarray:
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_shapes(self) -> Self:
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be 2-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}"
            )
        return self

    @property
    def d_in(self) -> int:
        return int(self.weight.shape[1])

    @property
    def d_out(self) -> int:
        return int(self.weight.shape[0])


class EncoderParams(BaseModel):
    """
    Parameters of the representation function f: an MLP with tanh hidden
    activations whose final layer outputs the D-dimensional representation,
    plus the rotation head W_r (D x 4) used by the degeneracy loss.
    """

    model_config = ConfigDict(
        extra="forbid",
        arbitrary_types_allowed=True,
    )

    layers: list[LayerParams] = Field(min_length=1, description="Affine layers, input first")
    rot_head: np.ndarray = Field(description="Rotation-prediction head of shape (D, 4)")

    @field_validator("rot_head", mode="before")
    @classmethod
    def _head_as_float64(cls, value: object) -> np.ndarray:
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_chain(self) -> Self:
        for i in range(1, len(self.layers)):
            if self.layers[i].d_in != self.layers[i - 1].d_out:
                raise ValueError(
                    f"layer {i} input dim {self.layers[i].d_in} does not match "
                    f"layer {i - 1} output dim {self.layers[i - 1].d_out}"
                )
        if self.rot_head.shape != (self.layers[-1].d_out, 4):
            raise ValueError(
                f"rot_head must have shape ({self.layers[-1].d_out}, 4), got {self.rot_head.shape}"
            )
        for name, array in zip(self.names(), self.arrays(), strict=True):
            if not np.all(np.isfinite(array)):
                raise ValueError(f"parameter {name} contains non-finite entries")
        return self

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def rep_dim(self) -> int:
        """Representation dimension D."""
        return self.layers[-1].d_out

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in canonical order: W0, b0, W1, b1, ..., rot_head."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        out.append(self.rot_head)
        return out

    def names(self) -> list[str]:
        out: list[str] = []
        for i in range(len(self.layers)):
            out.extend((f"layers.{i}.weight", f"layers.{i}.bias"))
        out.append("rot_head")
        return out

    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def with_arrays(self, arrays: list[np.ndarray]) -> Self:
        """Build a new instance of the same class from arrays in canonical order."""
        layers = [
            LayerParams(weight=arrays[2 * i], bias=arrays[2 * i + 1])
            for i in range(len(self.layers))
        ]
        return type(self)(layers=layers, rot_head=arrays[-1])

    def copy_params(self) -> Self:
        return self.with_arrays([a.copy() for a in self.arrays()])


class Gradients(EncoderParams):
    """Gradients of a scalar loss; shape-congruent with the EncoderParams they differentiate."""
