"""Line-oriented text format for problems and transaction logs.

One format serves both: ``#key=value`` header lines carry the house
count, kernel, update coefficients and policy switches; then one line
per house ``id v u opt_in x y lambda0 rho0``; then one line per
transaction ``t c i [price]``. Fields are space-separated, prices carry
two decimals, and all other dollar values round-trip at full precision.
A transaction log written by the engine embeds the city it ran on, so a
single file is replayable on its own.
"""

from __future__ import annotations

import math

import numpy as np

from .repp import (
    City,
    KernelShape,
    KernelSpec,
    MarketState,
    PiVariant,
    ReppProblem,
    TransactionRecord,
    UpdateCoefficients,
)


class FormatError(ValueError):
    """Malformed problem/log text; carries the offending 1-based line."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _detect_side(positions: np.ndarray) -> int | None:
    """Recognize a row-major unit-spaced square grid."""
    n = positions.shape[0]
    side = math.isqrt(n)
    if side * side != n or side < 2:
        return None
    cols = np.tile(np.arange(side, dtype=np.float64), side)
    rows = np.repeat(np.arange(side, dtype=np.float64), side)
    if np.array_equal(positions[:, 0], cols) and np.array_equal(positions[:, 1], rows):
        return side
    return None


def problem_header(problem: ReppProblem) -> dict[str, str]:
    kernel = problem.kernel
    coeffs = problem.coefficients
    header = {"N": str(problem.houses.n), "kernel": kernel.shape.value}
    if kernel.shape is KernelShape.RADIAL:
        header["R"] = repr(float(kernel.R))
    else:
        header["R"] = repr(float(max(kernel.R_x, kernel.R_y)))
        header["R_x"] = repr(float(kernel.R_x))
        header["R_y"] = repr(float(kernel.R_y))
    header["a"] = repr(float(coeffs.a))
    header["b"] = repr(float(coeffs.b))
    header["pi_variant"] = coeffs.pi_variant.value
    header["optout_updates_lambda"] = "1" if problem.optout_updates_lambda else "0"
    return header


def write_problem(path, problem: ReppProblem) -> None:
    houses, state = problem.houses, problem.initial_state
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in problem_header(problem).items():
            fh.write(f"#{key}={value}\n")
        for i in range(houses.n):
            fh.write(f"{i} {houses.v[i]!r} {houses.u[i]!r} "
                     f"{1 if houses.opt_in[i] else 0} "
                     f"{houses.positions[i, 0]!r} {houses.positions[i, 1]!r} "
                     f"{state.lam[i]!r} {state.rho[i]!r}\n")
        for t in problem.transactions:
            if t.price is None:
                fh.write(f"{t.contract_day} {t.closing_day} {t.house}\n")
            else:
                fh.write(f"{t.contract_day} {t.closing_day} {t.house} {t.price:.2f}\n")


def read_problem(path) -> ReppProblem:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()

    header: dict[str, str] = {}
    body_at = 0
    for line_no, line in enumerate(lines, start=1):
        if not line.startswith("#"):
            body_at = line_no - 1
            break
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            raise FormatError(line_no, f"malformed header line {line.strip()!r}")
        header[key] = value
        body_at = line_no

    try:
        n = int(header["N"])
    except KeyError:
        raise FormatError(1, "missing required header key N") from None
    except ValueError:
        raise FormatError(1, f"header N is not an integer: {header['N']!r}") from None

    try:
        shape = KernelShape(header.get("kernel", KernelShape.GRID_SEPARABLE.value))
        r = float(header.get("R", 10.0))
        kernel = KernelSpec(shape, R=r,
                            R_x=float(header.get("R_x", r)),
                            R_y=float(header.get("R_y", r)))
        coeffs = UpdateCoefficients(
            a=float(header.get("a", 0.0)),
            b=float(header.get("b", 1.0)),
            pi_variant=PiVariant(header.get("pi_variant",
                                            PiVariant.CASE_STUDY.value)))
        optout_lambda = header.get("optout_updates_lambda", "1") == "1"
    except ValueError as exc:
        raise FormatError(1, f"bad header value: {exc}") from None

    body = [(line_no, line.strip()) for line_no, line in
            enumerate(lines, start=1)][body_at:]
    body = [(ln, text) for ln, text in body if text]

    if len(body) < n:
        raise FormatError(len(lines), f"expected {n} house lines, found {len(body)}")

    v = np.empty(n)
    u = np.empty(n)
    opt_in = np.empty(n, dtype=bool)
    positions = np.empty((n, 2))
    lam0 = np.empty(n)
    rho0 = np.empty(n)
    for k in range(n):
        line_no, text = body[k]
        parts = text.split()
        if len(parts) != 8:
            raise FormatError(line_no, f"house line needs 8 fields, got {len(parts)}")
        try:
            idx = int(parts[0])
            if idx != k:
                raise FormatError(line_no, f"expected house id {k}, got {idx}")
            v[k], u[k] = float(parts[1]), float(parts[2])
            opt_in[k] = parts[3] == "1"
            positions[k] = (float(parts[4]), float(parts[5]))
            lam0[k], rho0[k] = float(parts[6]), float(parts[7])
        except ValueError:
            raise FormatError(line_no, f"unparseable house line {text!r}") from None
        if not (np.isfinite(v[k]) and v[k] > 0 and np.isfinite(u[k]) and u[k] > 0):
            raise FormatError(line_no, "v and u must be finite and > 0")
        if not (np.isfinite(lam0[k]) and lam0[k] >= 0 and np.isfinite(rho0[k])):
            raise FormatError(line_no, "lambda0 must be finite and >= 0")

    transactions = []
    for line_no, text in body[n:]:
        parts = text.split()
        if len(parts) not in (3, 4):
            raise FormatError(line_no,
                              f"transaction line needs 3 or 4 fields, got {len(parts)}")
        try:
            t, c, i = int(parts[0]), int(parts[1]), int(parts[2])
            price = float(parts[3]) if len(parts) == 4 else None
        except ValueError:
            raise FormatError(line_no, f"unparseable transaction line {text!r}") from None
        if not 0 <= i < n:
            raise FormatError(line_no, f"transaction references unknown house {i}")
        if c < t:
            raise FormatError(line_no, f"closing day {c} before contract day {t}")
        if price is not None and not (math.isfinite(price) and price > 0):
            raise FormatError(line_no, f"price must be finite and > 0, got {price}")
        transactions.append(TransactionRecord(t, c, i, price))

    prev = None
    for k, t in enumerate(transactions):
        if prev is not None and t.closing_day < prev:
            raise FormatError(body[n + k][0],
                              f"transactions not sorted by closing day at house {t.house}")
        prev = t.closing_day

    city = City(v=v, u=u, opt_in=opt_in, positions=positions,
                side=_detect_side(positions))
    state = MarketState(lam=lam0, rho=rho0)
    return ReppProblem(houses=city, initial_state=state, transactions=transactions,
                       kernel=kernel, coefficients=coeffs,
                       optout_updates_lambda=optout_lambda)
