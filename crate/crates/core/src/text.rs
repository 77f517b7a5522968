//! Line-oriented `key = value` text format used for golden files and scenario
//! dumps. Reals are written with 17 significant digits so values round-trip
//! exactly; vectors are `[a, b]` and matrices `[[a, b], [c, d]]`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::density::{Bernoulli, GlobalHypothesis, PmbmDensity, PppIntensity, Track, WeightedGaussian};
use crate::error::{Error, Result};
use crate::gaussian::GaussianDensity;

pub(crate) fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub(crate) fn fmt_slice(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt_real(x)).collect();
    format!("[{}]", parts.join(", "))
}

pub(crate) fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| fmt_slice(&r.iter().copied().collect::<Vec<_>>()))
        .collect();
    format!("[{}]", rows.join(", "))
}

#[derive(Default)]
pub(crate) struct Writer {
    out: String,
}

impl Writer {
    pub fn line(&mut self, key: impl std::fmt::Display, value: impl std::fmt::Display) {
        writeln!(self.out, "{key} = {value}").unwrap();
    }

    pub fn real(&mut self, key: impl std::fmt::Display, x: f64) {
        self.line(key, fmt_real(x));
    }

    pub fn gaussian(&mut self, prefix: &str, g: &GaussianDensity) {
        self.line(format_args!("{prefix}.mean"), fmt_slice(g.mean().as_slice()));
        self.line(format_args!("{prefix}.cov"), fmt_matrix(g.cov()));
    }

    pub fn finish(self) -> String {
        self.out
    }
}

pub(crate) struct Reader<'a> {
    lines: Vec<(usize, &'a str, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Result<Self> {
        let mut lines = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            lines.push((n + 1, k.trim(), v.trim()));
        }
        Ok(Self { lines, pos: 0 })
    }

    fn line_no(&self) -> usize {
        self.lines
            .get(self.pos)
            .map_or_else(|| self.lines.last().map_or(1, |l| l.0 + 1), |l| l.0)
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line_no(),
            message: message.into(),
        }
    }

    pub fn expect(&mut self, key: &str) -> Result<&'a str> {
        match self.lines.get(self.pos) {
            Some(&(_, k, v)) if k == key => {
                self.pos += 1;
                Ok(v)
            }
            Some(&(_, k, _)) => Err(self.error(format!("expected key `{key}`, found `{k}`"))),
            None => Err(self.error(format!("expected key `{key}`, found end of input"))),
        }
    }

    pub fn finish(&self) -> Result<()> {
        match self.lines.get(self.pos) {
            None => Ok(()),
            Some(&(_, k, _)) => Err(self.error(format!("unexpected trailing key `{k}`"))),
        }
    }

    pub fn real(&mut self, key: &str) -> Result<f64> {
        let v = self.expect(key)?;
        v.parse().map_err(|_| self.back_error(format!("invalid real {v:?}")))
    }

    pub fn natural<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.expect(key)?;
        v.parse().map_err(|_| self.back_error(format!("invalid natural number {v:?}")))
    }

    pub fn vector(&mut self, key: &str) -> Result<Vec<f64>> {
        let v = self.expect(key)?;
        parse_list(v).map_err(|m| self.back_error(m))
    }

    pub fn naturals(&mut self, key: &str) -> Result<Vec<usize>> {
        let v = self.expect(key)?;
        let inner = strip_brackets(v).map_err(|m| self.back_error(m))?;
        split_items(inner)
            .into_iter()
            .map(|s| s.parse().map_err(|_| self.back_error(format!("invalid index {s:?}"))))
            .collect()
    }

    pub fn matrix(&mut self, key: &str) -> Result<DMatrix<f64>> {
        let v = self.expect(key)?;
        let inner = strip_brackets(v).map_err(|m| self.back_error(m))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rest = inner.trim();
        while !rest.is_empty() {
            let end = rest.find(']').ok_or_else(|| self.back_error("unterminated matrix row"))?;
            rows.push(parse_list(&rest[..=end]).map_err(|m| self.back_error(m))?);
            rest = rest[end + 1..].trim_start().trim_start_matches(',').trim_start();
        }
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(self.back_error("ragged matrix"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), n_cols, rows.into_iter().flatten()))
    }

    pub fn gaussian(&mut self, prefix: &str) -> Result<GaussianDensity> {
        let mean = self.vector(&format!("{prefix}.mean"))?;
        let cov = self.matrix(&format!("{prefix}.cov"))?;
        GaussianDensity::new(DVector::from_vec(mean), cov).map_err(|e| self.back_error(e.to_string()))
    }

    /// Error attributed to the line just consumed.
    fn back_error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.lines[self.pos - 1].0,
            message: message.into(),
        }
    }
}

fn strip_brackets(v: &str) -> std::result::Result<&str, String> {
    v.trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("expected a bracketed list, got {v:?}"))
}

fn split_items(inner: &str) -> Vec<&str> {
    if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(str::trim).collect()
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    split_items(strip_brackets(v)?)
        .into_iter()
        .map(|s| s.parse().map_err(|_| format!("invalid real {s:?}")))
        .collect()
}

const PMBM_FORMAT: &str = "pmbm/1";

impl PmbmDensity {
    pub fn to_text(&self) -> String {
        let mut w = Writer::default();
        w.line("format", PMBM_FORMAT);
        w.line("ppp.terms", self.ppp.terms.len());
        for (k, t) in self.ppp.terms.iter().enumerate() {
            w.real(format_args!("ppp.{k}.weight"), t.weight);
            w.gaussian(&format!("ppp.{k}"), &t.density);
        }
        w.line("tracks", self.tracks.len());
        for (i, t) in self.tracks.iter().enumerate() {
            w.line(format_args!("track.{i}.id"), t.id);
            w.line(format_args!("track.{i}.locals"), t.locals.len());
            for (l, b) in t.locals.iter().enumerate() {
                w.real(format_args!("track.{i}.{l}.existence"), b.existence);
                w.real(format_args!("track.{i}.{l}.assoc_weight_log"), b.assoc_weight_log);
                w.gaussian(&format!("track.{i}.{l}"), &b.density);
            }
        }
        w.line("hypotheses", self.hypotheses.len());
        for (a, h) in self.hypotheses.iter().enumerate() {
            w.real(format_args!("hypothesis.{a}.log_weight"), h.log_weight);
            let chosen: Vec<String> = h.locals_chosen.iter().map(usize::to_string).collect();
            w.line(format_args!("hypothesis.{a}.locals_chosen"), format_args!("[{}]", chosen.join(", ")));
        }
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text)?;
        let format = r.expect("format")?;
        if format != PMBM_FORMAT {
            return Err(r.error(format!("unsupported format {format:?}")));
        }
        let n_ppp: usize = r.natural("ppp.terms")?;
        let mut terms = Vec::with_capacity(n_ppp);
        for k in 0..n_ppp {
            let weight = r.real(&format!("ppp.{k}.weight"))?;
            let density = r.gaussian(&format!("ppp.{k}"))?;
            terms.push(WeightedGaussian { weight, density });
        }
        let n_tracks: usize = r.natural("tracks")?;
        let mut tracks = Vec::with_capacity(n_tracks);
        for i in 0..n_tracks {
            let id = r.natural(&format!("track.{i}.id"))?;
            let n_locals: usize = r.natural(&format!("track.{i}.locals"))?;
            let mut locals = Vec::with_capacity(n_locals);
            for l in 0..n_locals {
                let existence = r.real(&format!("track.{i}.{l}.existence"))?;
                let assoc_weight_log = r.real(&format!("track.{i}.{l}.assoc_weight_log"))?;
                let density = r.gaussian(&format!("track.{i}.{l}"))?;
                locals.push(Bernoulli { existence, density, assoc_weight_log });
            }
            tracks.push(Track { id, locals });
        }
        let n_hyp: usize = r.natural("hypotheses")?;
        let mut hypotheses = Vec::with_capacity(n_hyp);
        for a in 0..n_hyp {
            let log_weight = r.real(&format!("hypothesis.{a}.log_weight"))?;
            let locals_chosen = r.naturals(&format!("hypothesis.{a}.locals_chosen"))?;
            hypotheses.push(GlobalHypothesis { log_weight, locals_chosen });
        }
        r.finish()?;
        Ok(Self {
            ppp: PppIntensity::new(terms),
            tracks,
            hypotheses,
        })
    }
}
