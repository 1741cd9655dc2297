"""Fixed-point currency.

Amounts are held as non-negative integers of base units, 10**18 per whole
unit (the "Wei" figures printed in price tables are whole units here).
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, InvalidOperation, localcontext

SCALE = 10**18
FRACTION_DIGITS = 18


class MoneyError(ValueError):
    pass


class Underflow(MoneyError):
    """Subtraction would produce a negative amount."""


@dataclass(frozen=True, order=True)
class Money:
    units: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.units, bool) or not isinstance(self.units, int):
            raise MoneyError(f"base units must be an int, got {self.units!r}")
        if self.units < 0:
            raise MoneyError(f"negative amount: {self.units}")

    @classmethod
    def parse(cls, text: str | Decimal | int) -> Money:
        """Parse a decimal amount in whole units, e.g. ``"0.0188"``.

        Raises MoneyError if the value is negative, not a number, or carries
        more than 18 fractional digits.
        """
        try:
            value = Decimal(text)
        except (InvalidOperation, TypeError) as exc:
            raise MoneyError(f"not a decimal amount: {text!r}") from exc
        if not value.is_finite():
            raise MoneyError(f"not a finite amount: {text!r}")
        with localcontext() as ctx:
            ctx.prec = max(ctx.prec, len(value.as_tuple().digits) + FRACTION_DIGITS + 2)
            scaled = value.scaleb(FRACTION_DIGITS)
        if scaled != scaled.to_integral_value():
            raise MoneyError(f"more than {FRACTION_DIGITS} fractional digits: {text!r}")
        return cls(int(scaled))

    def __add__(self, other: Money) -> Money:
        if not isinstance(other, Money):
            return NotImplemented
        return Money(self.units + other.units)

    def __sub__(self, other: Money) -> Money:
        if not isinstance(other, Money):
            return NotImplemented
        if other.units > self.units:
            raise Underflow(f"{self} - {other} is negative")
        return Money(self.units - other.units)

    def __mul__(self, factor: int) -> Money:
        if isinstance(factor, bool) or not isinstance(factor, int):
            return NotImplemented
        return Money(self.units * factor)

    __rmul__ = __mul__

    def __bool__(self) -> bool:
        return self.units != 0

    def __float__(self) -> float:
        # int / int is correctly rounded, so float(Money.parse(s)) == float(s)
        return self.units / SCALE

    def percent(self, pct: int) -> Money:
        """Floor of ``pct`` percent of this amount (multiply before divide)."""
        return Money(self.units * pct // 100)

    def to_decimal(self) -> Decimal:
        with localcontext() as ctx:
            ctx.prec = max(ctx.prec, len(str(self.units)) + 2)
            return Decimal(self.units).scaleb(-FRACTION_DIGITS)

    def __str__(self) -> str:
        whole, frac = divmod(self.units, SCALE)
        return f"{whole}.{frac:0{FRACTION_DIGITS}d}"

    def short(self) -> str:
        """Shortest decimal rendering without trailing zeros: ``0.192``."""
        whole, frac = divmod(self.units, SCALE)
        if not frac:
            return str(whole)
        return f"{whole}.{frac:0{FRACTION_DIGITS}d}".rstrip("0")

    def __repr__(self) -> str:
        return f"Money('{self.short()}')"


ZERO = Money(0)


def total(amounts) -> Money:
    return sum(amounts, ZERO)
