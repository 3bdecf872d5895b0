"""Shared builders for scripted devices and seeds."""

from cdiqkd.bitcore import BitString
from cdiqkd.expansion import round_schedule
from cdiqkd.ghz_device import DeviceModel, derive_rng


def random_bits(n, *labels):
    rng = derive_rng(12345, "bits", *labels)
    return BitString(int.from_bytes(rng.bytes((n + 7) // 8), "big") >> ((-n) % 8), n)


def scripted_failures(seed, config, failures):
    """Scripted model that loses exactly ``failures`` game rounds (the first
    ones) and wins every other round under ``seed``'s schedule."""
    table = {}
    lost = 0
    for i, (g, x) in enumerate(round_schedule(seed, config)):
        parity = x[0] & x[1] & x[2]
        if g and lost < failures:
            parity ^= 1
            lost += 1
        table[i] = (parity, 0, 0)
    if lost < failures:
        raise ValueError(f"seed yields only {lost} game rounds")
    return DeviceModel.scripted(table)
