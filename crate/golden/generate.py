"""Builds the golden message bodies byte by byte, independently of the Rust codec."""

import struct
from pathlib import Path

HEADER = b"PX\x01"


def u8(v):
    return struct.pack("<B", v)


def u32(v):
    return struct.pack("<I", v)


def i64(v):
    return struct.pack("<q", v)


def f64(v):
    return struct.pack("<d", v)


def string(s):
    b = s.encode("utf-8")
    return u32(len(b)) + b


def vector(shape, data):
    return u8(len(shape)) + b"".join(u32(d) for d in shape) + b"".join(f64(x) for x in data)


def real(x):
    return u8(1) + f64(x)


def integer(k):
    return u8(2) + i64(k)


def realvector(shape, data):
    return u8(3) + vector(shape, data)


def boolean(b):
    return u8(4) + u8(1 if b else 0)


def tn(mean, std, low, high):
    return f64(mean) + f64(std) + f64(low) + f64(high)


def uniform(low, high):
    return u8(1) + f64(low) + f64(high)


def normal(mean, std):
    return u8(2) + f64(mean) + f64(std)


def truncated_normal(mean, std, low, high):
    return u8(3) + tn(mean, std, low, high)


def categorical(probs):
    return u8(4) + vector([len(probs)], probs)


def poisson(rate):
    return u8(5) + f64(rate)


def mixture(weights, components):
    return u8(6) + vector([len(weights)], weights) + u32(len(components)) + b"".join(tn(*c) for c in components)


def body(kind, payload=b""):
    return HEADER + u8(kind) + payload


def sample(address, name, dist, control, replace):
    opt = u8(0) if name is None else u8(1) + string(name)
    return body(0x05, string(address) + opt + dist + u8(control) + u8(replace))


MESSAGES = {
    "handshake": body(0x01, string("traceprobe")),
    "handshake_result": body(0x02, string("toy") + string("conjugate-normal")),
    "run": body(0x03),
    "run_result": body(0x04, u8(1) + realvector([2, 3], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])),
    "run_result_none": body(0x04, u8(0)),
    "sample": sample("mu", "mu", normal(0.0, 1.0), True, False),
    "sample_uniform": sample("u", None, uniform(-1.5, 2.0), True, True),
    "sample_truncated_normal": sample("t", None, truncated_normal(0.5, 2.0, 0.0, 1.0), False, False),
    "sample_categorical": sample("channel", "ch", categorical([0.25, 0.5, 0.25]), True, False),
    "sample_mixture": sample(
        "m", None, mixture([0.3, 0.7], [(0.0, 1.0, -1.0, 1.0), (0.5, 0.25, -1.0, 1.0)]), True, False
    ),
    "sample_result": body(0x06, integer(-3)),
    "sample_result_boolean": body(0x06, boolean(True)),
    "sample_result_real": body(0x06, real(0.1)),
    "observe": body(0x07, string("y") + poisson(2.5) + integer(4)),
    "observe_result": body(0x08),
    "error": body(0xFF, string("aborted") + i64(1)),
}

if __name__ == "__main__":
    here = Path(__file__).parent
    for name, b in MESSAGES.items():
        (here / f"{name}.bin").write_bytes(b)
