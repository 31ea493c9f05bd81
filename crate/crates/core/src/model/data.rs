use crate::error::{Error, Result};

/// One subject's longitudinal and time-to-event record.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    /// Fixed-effect covariate rows, one per visit.
    pub x: Vec<Vec<f64>>,
    /// Survival covariates.
    pub w: Vec<f64>,
    /// Visit times (years), strictly increasing.
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    /// Observed time `min(t*, c*)`.
    pub t_obs: f64,
    /// `true` when the event was observed, `false` when censored.
    pub event: bool,
}

impl SubjectRecord {
    pub fn n_visits(&self) -> usize {
        self.s.len()
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::InvalidData {
            subject: self.id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks the per-subject invariants. `allow_empty` admits `n_i = 0`.
    pub fn validate(&self, allow_empty: bool) -> Result<()> {
        let n = self.s.len();
        if n == 0 && !allow_empty {
            return Err(self.fail("subject has no visits"));
        }
        if self.y.len() != n || self.x.len() != n {
            return Err(self.fail(format!(
                "visit count mismatch: s={}, y={}, x rows={}",
                n,
                self.y.len(),
                self.x.len()
            )));
        }
        if !(self.t_obs > 0.0 && self.t_obs.is_finite()) {
            return Err(self.fail(format!(
                "observed time must be positive, got {}",
                self.t_obs
            )));
        }
        for (j, pair) in self.s.windows(2).enumerate() {
            if !(pair[0] < pair[1]) {
                return Err(self.fail(format!(
                    "visit times not strictly increasing at visit {}",
                    j + 2
                )));
            }
        }
        if let Some(&last) = self.s.last() {
            if last > self.t_obs {
                return Err(self.fail(format!(
                    "visit at {last} after observed time {}",
                    self.t_obs
                )));
            }
        }
        let finite = self
            .s
            .iter()
            .chain(&self.y)
            .chain(&self.w)
            .all(|v| v.is_finite())
            && self.x.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(self.fail("non-finite value"));
        }
        Ok(())
    }
}

/// A validated collection of subjects with consistent covariate dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<SubjectRecord>,
    p_x: usize,
    p_w: usize,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        Self::build(subjects, false)
    }

    /// Like [`Dataset::new`] but admits subjects without visits. Only useful
    /// for isolating the survival and random-effect terms in tests.
    pub fn new_allowing_empty_visits(subjects: Vec<SubjectRecord>) -> Result<Self> {
        Self::build(subjects, true)
    }

    fn build(subjects: Vec<SubjectRecord>, allow_empty: bool) -> Result<Self> {
        let first = subjects.first().ok_or_else(|| Error::InvalidData {
            subject: String::new(),
            reason: "dataset has no subjects".into(),
        })?;
        let p_w = first.w.len();
        let p_x = first
            .x
            .first()
            .map(Vec::len)
            .or_else(|| subjects.iter().find_map(|s| s.x.first().map(Vec::len)))
            .unwrap_or(0);
        for s in &subjects {
            s.validate(allow_empty)?;
            if s.w.len() != p_w {
                return Err(s.fail(format!(
                    "expected {p_w} survival covariates, got {}",
                    s.w.len()
                )));
            }
            if let Some(row) = s.x.iter().find(|r| r.len() != p_x) {
                return Err(s.fail(format!(
                    "expected {p_x} longitudinal covariates, got {}",
                    row.len()
                )));
            }
        }
        Ok(Self { subjects, p_x, p_w })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn p_x(&self) -> usize {
        self.p_x
    }

    pub fn p_w(&self) -> usize {
        self.p_w
    }

    pub fn n_censored(&self) -> usize {
        self.subjects.iter().filter(|s| !s.event).count()
    }
}

impl std::ops::Index<usize> for Dataset {
    type Output = SubjectRecord;

    fn index(&self, i: usize) -> &SubjectRecord {
        &self.subjects[i]
    }
}
