//! Critical sequences and the connectivity graph of a model.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{find_infinite_trajectories, Connections};
use crate::linalg::Vector;
use crate::model::MorseModel;

/// End condition of a critical sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum EndCond {
    /// The trajectory ends at this critical point.
    Crit(usize),
    /// The finite end lies outside Ū of the adjacent point of the sequence.
    Outside,
    /// The finite end lies in Ũ of the adjacent point of the sequence.
    Inside,
    /// Finite end of a sequence without points.
    Free,
}

/// A critical sequence (p₋; q₁, ..., q_k; p₊) with end conditions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CritSeq {
    pub minus: EndCond,
    pub points: Vec<usize>,
    pub plus: EndCond,
}

/// Where a trajectory space starts or ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    Crit(usize),
    /// The whole manifold X.
    X,
}

impl CritSeq {
    pub fn crit(a: usize, points: Vec<usize>, b: usize) -> Self {
        CritSeq { minus: EndCond::Crit(a), points, plus: EndCond::Crit(b) }
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    pub fn label(&self, model: &MorseModel) -> String {
        let first = self.points.first().map(|q| model.id(*q).to_string()).unwrap_or_default();
        let last = self.points.last().map(|q| model.id(*q).to_string()).unwrap_or_default();
        let end = |e: EndCond, q: &str| match e {
            EndCond::Crit(c) => model.id(c).to_string(),
            EndCond::Outside => format!("X\\U({q})"),
            EndCond::Inside => format!("U~({q})"),
            EndCond::Free => "X".to_string(),
        };
        let mid: Vec<&str> = self.points.iter().map(|q| model.id(*q)).collect();
        format!("({}; {}; {})", end(self.minus, &first), mid.join(", "), end(self.plus, &last))
    }

    /// Crit ends and points in strictly decreasing order along nonempty connections.
    pub fn check(&self, model: &MorseModel, conn: &Connectivity) -> Result<()> {
        let mut chain = Vec::new();
        if let EndCond::Crit(a) = self.minus {
            chain.push(a);
        }
        chain.extend(&self.points);
        if let EndCond::Crit(b) = self.plus {
            chain.push(b);
        }
        for w in chain.windows(2) {
            if !conn.connected(w[0], w[1]) {
                return Err(Error::Schema(format!(
                    "{} is not connected to {} in {}",
                    model.id(w[0]),
                    model.id(w[1]),
                    self.label(model)
                )));
            }
        }
        let finite = |e: EndCond| matches!(e, EndCond::Outside | EndCond::Inside);
        if self.points.is_empty() && (finite(self.minus) || finite(self.plus)) {
            return Err(Error::Schema("finite end conditions need a nonempty sequence".into()));
        }
        if !self.points.is_empty() && (self.minus == EndCond::Free || self.plus == EndCond::Free) {
            return Err(Error::Schema("free ends belong to empty sequences".into()));
        }
        Ok(())
    }
}

/// Which ordered pairs of critical points are joined by infinite trajectories.
#[derive(Clone, Debug)]
pub struct Connectivity {
    conn: Vec<Vec<bool>>,
    /// Representatives of M(a, b) for all connected pairs.
    pub reps: HashMap<(usize, usize), Connections>,
    /// Longest chain of intermediate points between a and b.
    breaking: Vec<Vec<usize>>,
}

impl Connectivity {
    pub fn compute(model: &MorseModel) -> Result<Self> {
        let n = model.points.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| model.cp(a).index > model.cp(b).index && model.cp(a).value > model.cp(b).value)
            .collect();
        let found: Vec<((usize, usize), Connections)> = pairs
            .par_iter()
            .map(|&(a, b)| find_infinite_trajectories(model, a, b).map(|c| ((a, b), c)))
            .collect::<Result<_>>()?;
        let mut conn = vec![vec![false; n]; n];
        let mut reps = HashMap::new();
        for ((a, b), c) in found {
            if !c.is_empty() {
                conn[a][b] = true;
                reps.insert((a, b), c);
            }
        }
        let mut breaking = vec![vec![0usize; n]; n];
        // relax until the longest chains are found
        for _ in 0..n {
            for a in 0..n {
                for b in 0..n {
                    if !conn[a][b] {
                        continue;
                    }
                    for c in 0..n {
                        if conn[a][c] && conn[c][b] {
                            breaking[a][b] = breaking[a][b].max(1 + breaking[c][b]);
                        }
                    }
                }
            }
        }
        Ok(Connectivity { conn, reps, breaking })
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        self.conn[a][b]
    }

    pub fn breaking_number(&self, a: usize, b: usize) -> usize {
        self.breaking[a][b]
    }

    /// Isolated representatives of M(a, b); empty for families.
    pub fn isolated(&self, a: usize, b: usize) -> &[Vector] {
        match self.reps.get(&(a, b)) {
            Some(Connections::Isolated(v)) => v,
            _ => &[],
        }
    }
}

fn chains_from(conn: &Connectivity, n: usize, start: Option<usize>, out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>) {
    for c in 0..n {
        let ok = match cur.last().copied().or(start) {
            Some(p) => conn.connected(p, c),
            None => true,
        };
        if ok {
            cur.push(c);
            out.push(cur.clone());
            chains_from(conn, n, start, out, cur);
            cur.pop();
        }
    }
}

/// All critical sequences of the trajectory space from `from` to `to`.
pub fn enumerate_critseqs(model: &MorseModel, conn: &Connectivity, from: Terminal, to: Terminal) -> Vec<CritSeq> {
    let n = model.points.len();
    let mut chains = vec![Vec::new()];
    let start = match from {
        Terminal::Crit(a) => Some(a),
        Terminal::X => None,
    };
    chains_from(conn, n, start, &mut chains, &mut Vec::new());
    let mut out = Vec::new();
    for ch in chains {
        if let Terminal::Crit(b) = to {
            let last = ch.last().copied().or(start);
            match last {
                Some(l) if conn.connected(l, b) => {}
                None => {}
                _ => continue,
            }
        }
        if ch.is_empty() {
            if let (Terminal::Crit(a), Terminal::Crit(b)) = (from, to) {
                if !conn.connected(a, b) {
                    continue;
                }
            }
            let e = |t: Terminal| match t {
                Terminal::Crit(c) => EndCond::Crit(c),
                Terminal::X => EndCond::Free,
            };
            out.push(CritSeq { minus: e(from), points: ch, plus: e(to) });
            continue;
        }
        let minus: Vec<EndCond> = match from {
            Terminal::Crit(a) => vec![EndCond::Crit(a)],
            Terminal::X => {
                let mut v = vec![];
                if model.cp(ch[0]).stable_dim() > 0 {
                    v.push(EndCond::Outside);
                }
                v.push(EndCond::Inside);
                v
            }
        };
        let plus: Vec<EndCond> = match to {
            Terminal::Crit(b) => vec![EndCond::Crit(b)],
            Terminal::X => {
                let mut v = vec![];
                if model.cp(*ch.last().unwrap()).unstable_dim() > 0 {
                    v.push(EndCond::Outside);
                }
                v.push(EndCond::Inside);
                v
            }
        };
        for m in &minus {
            for p in &plus {
                out.push(CritSeq { minus: *m, points: ch.clone(), plus: *p });
            }
        }
    }
    out
}
