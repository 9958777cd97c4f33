import numpy as np

from app.engine.params import ParamSpec, ParamVector, SlotKind


def discretize_batch(values: np.ndarray, spec: ParamSpec) -> np.ndarray:
    """
    Engine-legal configurations from raw regressor outputs (N x total_dim).
    Categorical groups become one-hot (+1 at the argmax, lowest index on
    ties); integer slots snap to the nearest legal value; continuous slots
    are clamped.
    """
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 1:
        return discretize_batch(values[None], spec)[0]
    out = np.clip(values, -1.0, 1.0).copy()
    for slot in spec.slots:
        if slot.kind == SlotKind.CATEGORICAL:
            group = values[:, slot.span]
            winners = np.argmax(group, axis=1)
            onehot = np.full_like(group, -1.0)
            onehot[np.arange(len(group)), winners] = 1.0
            out[:, slot.span] = onehot
        elif slot.kind == SlotKind.INTEGER:
            steps = slot.choices - 1
            col = out[:, slot.offset].astype(np.float64)
            out[:, slot.offset] = np.round((col + 1.0) * 0.5 * steps) / steps * 2.0 - 1.0
    return out.astype(np.float32)


def discretize_params(p: ParamVector, spec: ParamSpec) -> ParamVector:
    spec.check(p)
    return ParamVector(values=discretize_batch(p.values, spec), discrete=True)
