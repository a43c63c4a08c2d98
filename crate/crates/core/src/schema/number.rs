//! Exact decimal arithmetic over JSON number literals.

use std::str::FromStr;

use bigdecimal::BigDecimal;
use serde_json::Number;

pub(crate) fn decimal_of(n: &Number) -> BigDecimal {
    BigDecimal::from_str(&n.to_string()).expect("json number literal is a valid decimal")
}

/// True when the literal has no fraction or exponent part.
pub(crate) fn is_integer_literal(n: &Number) -> bool {
    !n.to_string().contains(['.', 'e', 'E'])
}

pub(crate) fn numbers_equal(a: &Number, b: &Number) -> bool {
    decimal_of(a) == decimal_of(b)
}
