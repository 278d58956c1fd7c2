//! Plain-text `key = value` reports with provenance.

use sha2::{Digest, Sha256};

use crate::keyrate::{AnchorReport, KeyRateResult};
use crate::protocol::BellEstimate;
use crate::stats::WorstCaseBounds;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `x` rounded to six significant digits, trailing zeros dropped.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub version: String,
    pub seed: Option<u64>,
    /// `(label, sha256)` for every input read.
    pub inputs: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            version: TOOL_VERSION.to_string(),
            seed,
            inputs: Vec::new(),
        }
    }

    pub fn with_input(mut self, label: &str, bytes: &[u8]) -> Self {
        self.inputs.push((label.to_string(), sha256_hex(bytes)));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportBundle {
    pub command: String,
    pub provenance: Provenance,
    pub bell: Option<BellEstimate>,
    pub bounds: Option<WorstCaseBounds>,
    pub key_rate: Option<KeyRateResult>,
    pub anchor: Option<AnchorReport>,
    /// Additional command-specific lines, already formatted.
    pub extra: Vec<(String, String)>,
}

impl ReportBundle {
    pub fn new(command: &str, provenance: Provenance) -> Self {
        Self {
            command: command.to_string(),
            provenance,
            ..Self::default()
        }
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.extra.push((key.to_string(), value.into()));
    }

    pub fn push_num(&mut self, key: &str, value: f64) {
        self.push(key, fmt_sig(value));
    }

    pub fn render(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![
            ("command".into(), self.command.clone()),
            ("version".into(), self.provenance.version.clone()),
            (
                "seed".into(),
                self.provenance
                    .seed
                    .map_or_else(|| "none".into(), |s| s.to_string()),
            ),
        ];
        for (label, hash) in &self.provenance.inputs {
            lines.push((format!("input.{label}.sha256"), hash.clone()));
        }
        let mut num = |k: &str, v: f64| lines.push((k.to_string(), fmt_sig(v)));
        if let Some(b) = &self.bell {
            num("S", b.s_value);
            num("sigma_S", b.sigma_s);
            for (x, y) in crate::protocol::CHSH_CELLS {
                num(&format!("E_{x}{y}"), b.correlator(x, y));
                num(&format!("sigma_E_{x}{y}"), b.correlator_sigma(x, y));
            }
            num("Q0", b.q0);
            num("Q1", b.q1);
            num("Q", b.q_avg);
            num("Q_unpooled", b.q_unpooled);
        }
        if let Some(w) = &self.bounds {
            num("tail", w.tail);
            num("s_min", w.s_min);
            num("q0_max", w.q0_max);
            num("q1_max", w.q1_max);
            lines.push((
                "posterior.win".into(),
                format!("Beta({}, {})", fmt_sig(w.win.a), fmt_sig(w.win.b)),
            ));
            lines.push((
                "posterior.q0".into(),
                format!("Beta({}, {})", fmt_sig(w.q0.a), fmt_sig(w.q0.b)),
            ));
            lines.push((
                "posterior.q1".into(),
                format!("Beta({}, {})", fmt_sig(w.q1.a), fmt_sig(w.q1.b)),
            ));
        }
        if let Some(k) = &self.key_rate {
            let mut num = |key: &str, v: f64| lines.push((key.to_string(), fmt_sig(v)));
            num("chi_S", k.chi_s);
            num("h_Q", k.h_q);
            num("raw_rate", k.raw_rate());
            num("rate", k.rate);
            lines.push(("clamped".into(), k.clamped.to_string()));
        }
        if let Some(a) = &self.anchor {
            lines.push(("anchor.modeled_rate".into(), fmt_sig(a.modeled_rate)));
            lines.push(("anchor.positive".into(), a.positive.to_string()));
            lines.push((
                "anchor.original_protocol_positive".into(),
                a.original_protocol_positive.to_string(),
            ));
            lines.push(("anchor.label".into(), a.label.to_string()));
        }
        lines.extend(self.extra.iter().cloned());
        lines
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Value of `key` in a rendered report.
pub fn report_value<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report.lines().find_map(|l| {
        let (k, v) = l.split_once(" = ")?;
        (k == key).then_some(v)
    })
}
