//! Butcher tableaus for the explicit methods used by the fixed-step solver.

use serde::{Deserialize, Serialize};

/// Explicit Runge-Kutta method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Tsitouras 5(4), 7 stages with first-same-as-last.
    #[default]
    Tsit5,
    /// Classical 4th-order Runge-Kutta.
    Rk4,
}

/// Lower-triangular explicit tableau. `a[i]` holds the coefficients of stage `i`
/// on stages `0..i`.
#[derive(Debug)]
pub struct Tableau {
    pub c: &'static [f64],
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
    /// Last stage is evaluated at the step end point (b of the last stage is zero).
    pub fsal: bool,
    pub order: u32,
}

impl Tableau {
    pub fn stages(&self) -> usize {
        self.c.len()
    }
}

impl Method {
    pub fn tableau(self) -> &'static Tableau {
        match self {
            Method::Tsit5 => &TSIT5,
            Method::Rk4 => &RK4,
        }
    }
}

pub static RK4: Tableau = Tableau {
    c: &[0.0, 0.5, 0.5, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    fsal: false,
    order: 4,
};

// Tsitouras (2011) coefficients, 5th-order propagating solution.
pub static TSIT5: Tableau = Tableau {
    c: &[0.0, 0.161, 0.327, 0.9, 0.980_025_540_904_509_7, 1.0, 1.0],
    a: &[
        &[],
        &[0.161],
        &[-0.008_480_655_492_356_989, 0.335_480_655_492_357],
        &[2.897_153_057_105_493, -6.359_448_489_975_075, 4.362_295_432_869_581_5],
        &[
            5.325_864_828_439_257,
            -11.748_883_564_062_828,
            7.495_539_342_889_836_5,
            -0.092_495_066_361_755_25,
        ],
        &[
            5.861_455_442_946_42,
            -12.920_969_317_847_11,
            8.159_367_898_576_159,
            -0.071_584_973_281_401,
            -0.028_269_050_394_068_383,
        ],
        &[
            0.096_460_766_818_065_23,
            0.01,
            0.479_889_650_414_499_6,
            1.379_008_574_103_742,
            -3.290_069_515_436_081,
            2.324_710_524_099_774,
        ],
    ],
    b: &[
        0.096_460_766_818_065_23,
        0.01,
        0.479_889_650_414_499_6,
        1.379_008_574_103_742,
        -3.290_069_515_436_081,
        2.324_710_524_099_774,
        0.0,
    ],
    fsal: true,
    order: 5,
};

#[cfg(test)]
mod tests {
    use super::*;

    fn check_consistency(t: &Tableau) {
        for (i, row) in t.a.iter().enumerate() {
            assert_eq!(row.len(), i);
            let s: f64 = row.iter().sum();
            assert!((s - t.c[i]).abs() < 1e-12, "row {i}: {s} vs {}", t.c[i]);
        }
        let sb: f64 = t.b.iter().sum();
        assert!((sb - 1.0).abs() < 1e-12);
    }

    #[test]
    fn row_sums_match_nodes() {
        check_consistency(&TSIT5);
        check_consistency(&RK4);
    }

    #[test]
    fn tsit5_fsal_row_equals_weights() {
        let last = TSIT5.a[6];
        for (a, b) in last.iter().zip(TSIT5.b) {
            assert_eq!(a, b);
        }
    }
}
