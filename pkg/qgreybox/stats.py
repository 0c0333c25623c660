"""Mergeable first/second moments (Chan et al. parallel update)."""

import numpy as np

from .exceptions import ProgrammingError


class RunningMoments:
    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def update(self, batch):
        """Add samples stacked along axis 0."""
        batch = np.asarray(batch, dtype=float)
        if batch.shape[0] == 0:
            return self
        other = RunningMoments(batch.shape[1:])
        other.count = batch.shape[0]
        other.mean = batch.mean(axis=0)
        other.m2 = ((batch - other.mean) ** 2).sum(axis=0)
        return self.merge(other)

    def merge(self, other):
        if other.mean.shape != self.mean.shape:
            raise ProgrammingError(
                f"Cannot merge moments of shape {other.mean.shape} into {self.mean.shape}"
            )
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / total)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / total)
        self.count = total
        return self

    @property
    def variance(self):
        if self.count < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.count - 1)

    @property
    def stderr(self):
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.variance / self.count)
