//! Static description of the five benchmark systems and their ID/OOD
//! parameter ranges.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemId {
    /// Diffusion-reaction, channels (u, v).
    Dr,
    /// Incompressible Navier-Stokes in vorticity form, channel ω.
    Ns,
    /// Coupled 2D Burgers, channels (u, v).
    Bg,
    /// Shallow water radial dam break, channel h.
    Sw,
    /// Heat conduction with a varying source, channel u.
    Hc,
}

impl SystemId {
    pub const ALL: [SystemId; 5] = [SystemId::Dr, SystemId::Ns, SystemId::Bg, SystemId::Sw, SystemId::Hc];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemId::Dr => "dr",
            SystemId::Ns => "ns",
            SystemId::Bg => "bg",
            SystemId::Sw => "sw",
            SystemId::Hc => "hc",
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dr" => Ok(SystemId::Dr),
            "ns" => Ok(SystemId::Ns),
            "bg" => Ok(SystemId::Bg),
            "sw" => Ok(SystemId::Sw),
            "hc" => Ok(SystemId::Hc),
            other => Err(Error::UnknownSystem(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainId,
    TestId,
    TestOod,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::TrainId, Split::TestId, Split::TestOod];

    /// Directory name used inside a system dataset root.
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::TrainId => "train",
            Split::TestId => "id",
            Split::TestOod => "ood",
        }
    }

    pub fn is_ood(self) -> bool {
        matches!(self, Split::TestOod)
    }

    fn tag(self) -> u64 {
        match self {
            Split::TrainId => 0x7472_6169_6e00,
            Split::TestId => 0x7465_7374_6964,
            Split::TestOod => 0x7465_7374_6f6f,
        }
    }

    pub(crate) fn seed_tag(self) -> u64 {
        self.tag()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "train_id" => Ok(Split::TrainId),
            "id" | "test_id" => Ok(Split::TestId),
            "ood" | "test_ood" => Ok(Split::TestOod),
            other => Err(Error::Invalid(format!("unknown split `{other}` (expected train, id or ood)"))),
        }
    }
}

/// A closed interval, or half-open `[lo, hi)` when `hi_open`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub hi_open: bool,
}

impl Interval {
    pub const fn closed(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, hi_open: false }
    }

    pub const fn half_open(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, hi_open: true }
    }

    pub const fn point(v: f64) -> Self {
        Interval::closed(v, v)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && if self.hi_open { v < self.hi } else { v <= self.hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo || (self.hi_open && self.hi == self.lo)
    }

    /// True when no value lies in both intervals.
    pub fn disjoint(&self, other: &Interval) -> bool {
        let below = |a: &Interval, b: &Interval| a.hi < b.lo || (a.hi == b.lo && a.hi_open);
        below(self, other) || below(other, self)
    }
}

/// Union of intervals a parameter is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRange(pub Vec<Interval>);

impl ParamRange {
    pub fn single(i: Interval) -> Self {
        ParamRange(vec![i])
    }

    pub fn contains(&self, v: f64) -> bool {
        self.0.iter().any(|i| i.contains(v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Interval::is_empty)
    }

    /// A single degenerate interval: the parameter is held constant.
    pub fn fixed_value(&self) -> Option<f64> {
        match self.0.as_slice() {
            [i] if i.lo == i.hi && !i.hi_open => Some(i.lo),
            _ => None,
        }
    }
}

/// Whether a parameter belongs to the PDE coefficients `p` or the forcing `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Coefficient,
    Forcing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub role: ParamRole,
    pub id_range: ParamRange,
    pub ood_range: ParamRange,
}

impl ParamSpec {
    fn new(name: &str, role: ParamRole, id: Vec<Interval>, ood: Vec<Interval>) -> Self {
        ParamSpec { name: name.to_string(), role, id_range: ParamRange(id), ood_range: ParamRange(ood) }
    }

    /// Held at the same constant in every split (e.g. NS forcing frequency).
    pub fn is_fixed(&self) -> bool {
        matches!((self.id_range.fixed_value(), self.ood_range.fixed_value()), (Some(a), Some(b)) if a == b)
    }

    pub fn range(&self, split: Split) -> &ParamRange {
        if split.is_ood() {
            &self.ood_range
        } else {
            &self.id_range
        }
    }
}

/// Static description of one PDE system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub id: SystemId,
    pub channel_names: Vec<String>,
    /// Domain extent along x and y; the domain is `[0, lx] × [0, ly]`.
    pub extent: (f64, f64),
    pub t_end: f64,
    /// Number of saved frames, including t = 0.
    pub n_t: usize,
    pub params: Vec<ParamSpec>,
}

impl SystemSpec {
    pub fn new(id: SystemId) -> Self {
        use Interval as I;
        use ParamRole::{Coefficient as P, Forcing as F};
        let spec = match id {
            SystemId::Dr => SystemSpec {
                id,
                channel_names: vec!["u".into(), "v".into()],
                extent: (2.0, 2.0),
                t_end: 20.0,
                n_t: 21,
                params: vec![
                    ParamSpec::new("D_u", P, vec![I::half_open(1e-3, 2e-3)], vec![I::closed(2e-3, 3e-3)]),
                    ParamSpec::new("D_v", P, vec![I::half_open(5e-3, 1e-2)], vec![I::closed(1e-2, 1.5e-2)]),
                    ParamSpec::new("k", P, vec![I::half_open(5e-3, 1e-2)], vec![I::closed(1e-2, 1.5e-2)]),
                ],
            },
            SystemId::Ns => SystemSpec {
                id,
                channel_names: vec!["omega".into()],
                extent: (1.0, 1.0),
                t_end: 50.0,
                n_t: 31,
                params: vec![
                    ParamSpec::new(
                        "nu",
                        P,
                        vec![I::closed(1e-5, 1e-3)],
                        vec![I::closed(5e-6, 8e-6), I::closed(1.2e-3, 2e-3)],
                    ),
                    ParamSpec::new("w", F, vec![I::point(2.0)], vec![I::point(2.0)]),
                ],
            },
            SystemId::Bg => SystemSpec {
                id,
                channel_names: vec!["u".into(), "v".into()],
                extent: (64.0, 64.0),
                t_end: 1.0,
                n_t: 21,
                params: vec![ParamSpec::new(
                    "nu",
                    P,
                    vec![I::closed(5e-3, 5e-2)],
                    vec![I::closed(2.5e-3, 4e-3), I::closed(6e-2, 1e-1)],
                )],
            },
            SystemId::Sw => SystemSpec {
                id,
                channel_names: vec!["h".into()],
                extent: (5.0, 5.0),
                t_end: 1.0,
                n_t: 21,
                params: vec![ParamSpec::new("radius", P, vec![I::half_open(0.3, 0.63)], vec![I::closed(0.63, 0.7)])],
            },
            SystemId::Hc => SystemSpec {
                id,
                channel_names: vec!["u".into()],
                extent: (1.0, 1.0),
                t_end: 5.0,
                n_t: 21,
                params: vec![
                    ParamSpec::new("m1", F, vec![I::half_open(1.0, 2.0)], vec![I::closed(2.0, 3.0)]),
                    ParamSpec::new("m2", F, vec![I::half_open(5.0, 10.0)], vec![I::closed(10.0, 15.0)]),
                    ParamSpec::new("m3", F, vec![I::half_open(1.0, 2.0)], vec![I::closed(2.0, 3.0)]),
                    ParamSpec::new("A", F, vec![I::point(200.0)], vec![I::point(200.0)]),
                ],
            },
        };
        spec.validate().expect("built-in system ranges are disjoint");
        spec
    }

    pub fn from_id(id: SystemId) -> Self {
        Self::new(id)
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Spacing between saved frames, `T / (N_t − 1)`.
    pub fn dt_saved(&self) -> f64 {
        self.t_end / (self.n_t - 1) as f64
    }

    /// Checks that every non-fixed parameter has disjoint ID and OOD ranges.
    pub fn validate(&self) -> Result<()> {
        for p in &self.params {
            for (split, range) in [(Split::TrainId, &p.id_range), (Split::TestOod, &p.ood_range)] {
                if range.is_empty() {
                    return Err(Error::EmptyRange { split: split.to_string(), param: p.name.clone() });
                }
            }
            if p.is_fixed() {
                continue;
            }
            for a in &p.id_range.0 {
                for b in &p.ood_range.0 {
                    if !a.disjoint(b) {
                        return Err(Error::Invalid(format!(
                            "{}: ID range {a:?} overlaps OOD range {b:?} for `{}`",
                            self.id, p.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Names of the conditioning parameters: coefficients first, then forcing,
    /// each in declaration order.
    pub fn conditioning_names(&self) -> Vec<String> {
        let mut out: Vec<String> =
            self.params.iter().filter(|p| p.role == ParamRole::Coefficient).map(|p| p.name.clone()).collect();
        out.extend(self.params.iter().filter(|p| p.role == ParamRole::Forcing).map(|p| p.name.clone()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_counts_and_horizons() {
        let expect = [
            (SystemId::Dr, 21, 20.0),
            (SystemId::Ns, 31, 50.0),
            (SystemId::Bg, 21, 1.0),
            (SystemId::Sw, 21, 1.0),
            (SystemId::Hc, 21, 5.0),
        ];
        for (id, n_t, t) in expect {
            let s = SystemSpec::new(id);
            assert_eq!(s.n_t, n_t);
            assert_eq!(s.t_end, t);
        }
        assert_eq!(SystemSpec::new(SystemId::Ns).dt_saved(), 50.0 / 30.0);
    }

    #[test]
    fn all_systems_validate() {
        for id in SystemId::ALL {
            SystemSpec::new(id).validate().unwrap();
        }
    }

    #[test]
    fn overlapping_ranges_are_rejected() {
        let mut s = SystemSpec::new(SystemId::Bg);
        s.params[0].ood_range = ParamRange::single(Interval::closed(4e-2, 6e-2));
        assert!(s.validate().is_err());
        // A closed ID range touching the OOD endpoint overlaps at that point.
        let mut s = SystemSpec::new(SystemId::Sw);
        s.params[0].id_range = ParamRange::single(Interval::closed(0.3, 0.63));
        assert!(s.validate().is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("NS".parse::<SystemId>().unwrap(), SystemId::Ns);
        assert!(matches!("kdv".parse::<SystemId>(), Err(Error::UnknownSystem(_))));
        assert_eq!("ood".parse::<Split>().unwrap(), Split::TestOod);
    }
}
