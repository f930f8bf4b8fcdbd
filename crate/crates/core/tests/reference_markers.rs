//! Fits run against the reference per-group GMM estimates, in bytes.

use burstlab::fit::{
    fit_linear_through_origin, fit_power_law, fit_vr_model, FitOptions, TraceGroup,
};
use burstlab::Error;

const S: [f64; 10] = [
    43987.4105337722,
    86687.3172136039,
    129630.16392158,
    163917.705970245,
    205372.193813957,
    22836.4064350911,
    43850.5278091716,
    65380.1220246637,
    86561.8935662348,
    107341.414307637,
];
const MU_P: [f64; 10] = [
    38309.9398432646,
    75362.1382096053,
    116876.7014488,
    155371.598377985,
    185133.147956916,
    16367.9950604384,
    42342.1354409146,
    58487.9794685096,
    72971.3214252094,
    93013.5180167357,
];
const MU_I: [f64; 10] = [
    57160.3452983317,
    111200.691584276,
    156203.591402781,
    198091.152535039,
    231192.662315705,
    38336.4094872465,
    48500.9129460361,
    75573.6656432016,
    105512.369058656,
    113066.754325084,
];
const SIGMA_P: [f64; 10] = [
    8780.62163105488,
    10769.6212187506,
    13290.5672687238,
    13665.482567833,
    20080.9448204423,
    4468.81019471742,
    7274.37177726914,
    7713.19524919357,
    12412.9295174141,
    15120.497810535,
];
const SIGMA_I: [f64; 10] = [
    9135.70895591042,
    18243.739870626,
    19576.3926448485,
    36030.8919945953,
    33953.6209373628,
    8512.19774691596,
    15845.4837278307,
    14106.4636468249,
    16697.0012109305,
    14385.3057618974,
];

// Reference fit lines evaluated at the ends of the S range.
const S_ENDS: [f64; 2] = [22836.4064350911, 205372.193813957];
const SIGMA_P_LINE: [f64; 2] = [4795.07494815927, 18927.7190020939];
const SIGMA_I_LINE: [f64; 2] = [8238.61803753007, 29002.574564542];

fn pairs(y: &[f64; 10]) -> Vec<(f64, f64)> {
    S.iter().copied().zip(y.iter().copied()).collect()
}

#[test]
fn i_mean_slope_from_markers() {
    let s = fit_linear_through_origin(&pairs(&MU_I), None).unwrap();
    assert!((s - 1.1764).abs() <= 0.02, "{s}");
}

#[test]
fn p_mean_slope_from_markers() {
    let s = fit_linear_through_origin(&pairs(&MU_P), None).unwrap();
    assert!((s - 0.9008).abs() <= 0.02, "{s}");
}

#[test]
fn p_power_law_exponent_from_markers() {
    let (_, b) = fit_power_law(&pairs(&SIGMA_P)).unwrap();
    assert!((b - 0.6251).abs() / 0.6251 <= 0.10, "{b}");
}

#[test]
fn p_power_law_coefficient_from_markers() {
    // Ordinary log-log least squares on these markers gives a = 10.274
    // (independent numpy fit), 13.6% above the reference 9.0399. The curve
    // itself still lands on the reference line; see the next test.
    let (a, b) = fit_power_law(&pairs(&SIGMA_P)).unwrap();
    assert!((a - 10.274027879825562).abs() < 1e-6, "{a}");
    assert!((b - 0.6140750711453674).abs() < 1e-9, "{b}");
}

#[test]
fn power_law_curves_track_reference_lines() {
    for (sigma, line) in [(&SIGMA_P, SIGMA_P_LINE), (&SIGMA_I, SIGMA_I_LINE)] {
        let (a, b) = fit_power_law(&pairs(sigma)).unwrap();
        for (s, want) in S_ENDS.iter().zip(line) {
            let got = a * s.powf(b);
            assert!((got - want).abs() / want <= 0.10, "S={s}: {got} vs {want}");
        }
    }
}

#[test]
fn identical_s_groups_are_rejected() {
    let group = || TraceGroup {
        frame_rate: 60.0,
        target_rate_bps: Some(50e6),
        sizes: (0..200)
            .map(|i| 100_000.0 + (i % 17) as f64 * 1000.0)
            .collect(),
        periods_s: vec![1.0 / 60.0; 200],
    };
    let err = fit_vr_model(&[group(), group()], &FitOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)), "{err:?}");
}
