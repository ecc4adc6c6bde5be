//! Finite-alphabet probability machinery: distributions, channels,
//! joint laws, entropy and mutual information, empirical types and
//! l-infinity typicality.
//!
//! All quantities are in bits (log base 2) and `0 log 0 = 0`. Types are
//! immutable after construction; sum-to-one invariants are checked at
//! construction with tolerance [`TOL_DIST`] and violations are rejected
//! rather than renormalized.

use std::sync::Arc;

use rand::Rng;

use crate::error::AvcError;
use crate::rng::derive_rng;
use crate::Result;

/// Construction tolerance for sum-to-one invariants.
pub const TOL_DIST: f64 = 1e-9;

/// Mutual information values in `[-TOL_MI, 0)` are clamped to zero.
pub const TOL_MI: f64 = 1e-12;

/// Slack used when comparing a deviation against a typicality radius,
/// so that boundary cases like `|0.5 - 0.45| <= 0.05` behave as exact.
const TYP_EDGE: f64 = 1e-12;

/// An ordered finite set of distinct symbol names.
///
/// Cloning is cheap; the label list is shared.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    labels: Arc<Vec<String>>,
}

impl Alphabet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(AvcError::invalid("alphabet must have at least one symbol"));
        }
        for i in 0..labels.len() {
            for j in (i + 1)..labels.len() {
                if labels[i] == labels[j] {
                    return Err(AvcError::invalid(format!(
                        "duplicate alphabet label {:?}",
                        labels[i]
                    )));
                }
            }
        }
        Ok(Alphabet {
            labels: Arc::new(labels),
        })
    }

    /// Alphabet `{"0", "1", ..., "size-1"}`.
    pub fn indexed(size: usize) -> Self {
        Alphabet::new((0..size).map(|i| i.to_string()).collect()).expect("size >= 1")
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Product alphabet with labels `"a,b"`; used for channel inputs
    /// indexed by a pair such as `(x, s)`.
    pub fn product(&self, other: &Alphabet) -> Alphabet {
        let mut labels = Vec::with_capacity(self.size() * other.size());
        for a in self.labels.iter() {
            for b in other.labels.iter() {
                labels.push(format!("{a},{b}"));
            }
        }
        Alphabet {
            labels: Arc::new(labels),
        }
    }
}

/// A probability distribution over a finite alphabet.
#[derive(Clone, Debug)]
pub struct Dist {
    alphabet: Alphabet,
    mass: Vec<f64>,
}

impl Dist {
    pub fn new(alphabet: Alphabet, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != alphabet.size() {
            return Err(AvcError::invalid(format!(
                "mass vector length {} does not match alphabet size {}",
                mass.len(),
                alphabet.size()
            )));
        }
        validate_mass(&mass, TOL_DIST)?;
        Ok(Dist { alphabet, mass })
    }

    /// Uniform distribution.
    pub fn uniform(alphabet: Alphabet) -> Self {
        let n = alphabet.size();
        Dist {
            mass: vec![1.0 / n as f64; n],
            alphabet,
        }
    }

    /// Point mass on symbol `index`.
    pub fn point_mass(alphabet: Alphabet, index: usize) -> Result<Self> {
        if index >= alphabet.size() {
            return Err(AvcError::invalid("point mass index out of range"));
        }
        let mut mass = vec![0.0; alphabet.size()];
        mass[index] = 1.0;
        Ok(Dist { alphabet, mass })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.mass[i]
    }

    pub fn linf_distance(&self, other: &Dist) -> f64 {
        self.mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A row-stochastic conditional distribution: one [`Dist`] over the
/// output alphabet per input symbol.
#[derive(Clone, Debug)]
pub struct Channel {
    input_alphabet: Alphabet,
    output_alphabet: Alphabet,
    rows: Vec<Dist>,
}

impl Channel {
    pub fn new(input_alphabet: Alphabet, output_alphabet: Alphabet, rows: Vec<Dist>) -> Result<Self> {
        if rows.len() != input_alphabet.size() {
            return Err(AvcError::invalid(format!(
                "channel has {} rows for {} input symbols",
                rows.len(),
                input_alphabet.size()
            )));
        }
        for row in &rows {
            if row.alphabet() != &output_alphabet {
                return Err(AvcError::AlphabetMismatch(
                    "channel row alphabet differs from the output alphabet".into(),
                ));
            }
        }
        Ok(Channel {
            input_alphabet,
            output_alphabet,
            rows,
        })
    }

    /// Builds a channel from a dense row-major probability matrix.
    pub fn from_rows(input: Alphabet, output: Alphabet, rows: &[Vec<f64>]) -> Result<Self> {
        let dists = rows
            .iter()
            .map(|r| Dist::new(output.clone(), r.clone()))
            .collect::<Result<Vec<_>>>()?;
        Channel::new(input, output, dists)
    }

    /// Identity channel over `alphabet`.
    pub fn identity(alphabet: Alphabet) -> Self {
        let n = alphabet.size();
        let rows = (0..n)
            .map(|i| Dist::point_mass(alphabet.clone(), i).expect("index in range"))
            .collect();
        Channel {
            input_alphabet: alphabet.clone(),
            output_alphabet: alphabet,
            rows,
        }
    }

    /// Channel whose every row equals `out`; the output carries no
    /// information about the input.
    pub fn constant(input: Alphabet, out: Dist) -> Self {
        let rows = vec![out.clone(); input.size()];
        Channel {
            input_alphabet: input,
            output_alphabet: out.alphabet().clone(),
            rows,
        }
    }

    /// Binary symmetric channel with crossover probability `p`.
    pub fn bsc(p: f64) -> Result<Self> {
        let bits = Alphabet::indexed(2);
        Channel::from_rows(bits.clone(), bits, &[vec![1.0 - p, p], vec![p, 1.0 - p]])
    }

    pub fn input_alphabet(&self) -> &Alphabet {
        &self.input_alphabet
    }

    pub fn output_alphabet(&self) -> &Alphabet {
        &self.output_alphabet
    }

    pub fn row(&self, input: usize) -> &Dist {
        &self.rows[input]
    }

    pub fn prob(&self, output: usize, input: usize) -> f64 {
        self.rows[input].prob(output)
    }

    /// Output distribution under input distribution `p`: `[p * W]_out`.
    pub fn push_forward(&self, p: &Dist) -> Result<Dist> {
        if p.alphabet() != &self.input_alphabet {
            return Err(AvcError::AlphabetMismatch(
                "input distribution alphabet differs from channel input".into(),
            ));
        }
        let mut out = vec![0.0; self.output_alphabet.size()];
        for (i, row) in self.rows.iter().enumerate() {
            let w = p.prob(i);
            for (o, m) in out.iter_mut().enumerate() {
                *m += w * row.prob(o);
            }
        }
        // Rounding can push the sum a hair off one; fold the residue
        // into the largest cell so the Dist invariant holds exactly.
        Dist::new(self.output_alphabet.clone(), out)
    }

    /// Composition `self` then `next` (outputs of `self` feed `next`).
    pub fn then(&self, next: &Channel) -> Result<Channel> {
        if next.input_alphabet != self.output_alphabet {
            return Err(AvcError::AlphabetMismatch(
                "channel composition alphabets do not line up".into(),
            ));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| next.push_forward(r))
            .collect::<Result<Vec<_>>>()?;
        Channel::new(self.input_alphabet.clone(), next.output_alphabet.clone(), rows)
    }
}

/// A joint distribution over an ordered list of alphabets, stored as a
/// dense row-major tensor.
#[derive(Clone, Debug)]
pub struct JointDist {
    axes: Vec<Alphabet>,
    mass: Vec<f64>,
}

impl JointDist {
    pub fn new(axes: Vec<Alphabet>, mass: Vec<f64>) -> Result<Self> {
        let cells: usize = axes.iter().map(|a| a.size()).product();
        if axes.is_empty() {
            return Err(AvcError::invalid("joint distribution needs at least one axis"));
        }
        if mass.len() != cells {
            return Err(AvcError::invalid(format!(
                "mass tensor has {} cells, axes imply {}",
                mass.len(),
                cells
            )));
        }
        validate_mass(&mass, TOL_DIST)?;
        Ok(JointDist { axes, mass })
    }

    pub fn axes(&self) -> &[Alphabet] {
        &self.axes
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.size()).collect()
    }

    /// Row-major linear index for a multi-index.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for (axis, &i) in self.axes.iter().zip(idx) {
            lin = lin * axis.size() + i;
        }
        lin
    }

    pub fn prob(&self, idx: &[usize]) -> f64 {
        self.mass[self.linear_index(idx)]
    }

    /// Sums out all axes not listed in `keep` (in `keep` order).
    pub fn marginal(&self, keep: &[usize]) -> Result<JointDist> {
        for &k in keep {
            if k >= self.axes.len() {
                return Err(AvcError::invalid(format!(
                    "marginal axis {k} out of range for {}-axis joint",
                    self.axes.len()
                )));
            }
        }
        if keep.is_empty() {
            return Err(AvcError::invalid("marginal must keep at least one axis"));
        }
        let dims = self.dims();
        let out_axes: Vec<Alphabet> = keep.iter().map(|&k| self.axes[k].clone()).collect();
        let out_cells: usize = out_axes.iter().map(|a| a.size()).product();
        let mut out = vec![0.0; out_cells];
        let mut idx = vec![0usize; dims.len()];
        for &m in &self.mass {
            let mut lin = 0;
            for &k in keep {
                lin = lin * dims[k] + idx[k];
            }
            out[lin] += m;
            // advance the multi-index
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        JointDist::new(out_axes, out)
    }

    /// Marginal onto a single axis as a [`Dist`].
    pub fn marginal_dist(&self, axis: usize) -> Result<Dist> {
        let j = self.marginal(&[axis])?;
        Dist::new(j.axes[0].clone(), j.mass)
    }
}

fn validate_mass(mass: &[f64], tol: f64) -> Result<()> {
    let mut sum = 0.0;
    for (i, &m) in mass.iter().enumerate() {
        if !(m >= 0.0) {
            return Err(AvcError::NegativeMass { index: i, value: m });
        }
        sum += m;
    }
    if (sum - 1.0).abs() > tol {
        return Err(AvcError::NotNormalized { sum, tol });
    }
    Ok(())
}

/// Shannon entropy in bits, `0 log 0 = 0`.
pub fn entropy(p: &Dist) -> f64 {
    entropy_raw(p.mass())
}

pub(crate) fn entropy_raw(mass: &[f64]) -> f64 {
    let mut h = 0.0;
    for &m in mass {
        if m > 0.0 {
            h -= m * m.log2();
        }
    }
    h
}

/// Mutual information `I(A;B)` in bits of a two-axis joint, computed as
/// `H(A) + H(B) - H(A,B)`. Tiny negatives from rounding are clamped to
/// zero.
pub fn mutual_information(j: &JointDist) -> Result<f64> {
    if j.axes().len() != 2 {
        return Err(AvcError::invalid(format!(
            "mutual information needs a two-axis joint, got {} axes",
            j.axes().len()
        )));
    }
    let (na, nb) = (j.axes()[0].size(), j.axes()[1].size());
    Ok(mutual_information_raw(j.mass(), na, nb))
}

/// `I(A;B)` from a row-major `na x nb` mass matrix. Does not require an
/// exactly normalized input; used by the solver on freshly accumulated
/// joints.
pub(crate) fn mutual_information_raw(mass: &[f64], na: usize, nb: usize) -> f64 {
    debug_assert_eq!(mass.len(), na * nb);
    let mut pa = vec![0.0; na];
    let mut pb = vec![0.0; nb];
    for a in 0..na {
        for b in 0..nb {
            let m = mass[a * nb + b];
            pa[a] += m;
            pb[b] += m;
        }
    }
    let mut i = entropy_raw(&pa) + entropy_raw(&pb) - entropy_raw(mass);
    if i < 0.0 && i >= -TOL_MI {
        i = 0.0;
    }
    i
}

/// Joint distribution `joint(a, b) = p(a) ch(b|a)`.
pub fn compose(p: &Dist, ch: &Channel) -> Result<JointDist> {
    if p.alphabet() != ch.input_alphabet() {
        return Err(AvcError::AlphabetMismatch(
            "compose: distribution alphabet differs from channel input".into(),
        ));
    }
    let nb = ch.output_alphabet().size();
    let mut mass = vec![0.0; p.mass().len() * nb];
    for a in 0..p.mass().len() {
        for b in 0..nb {
            mass[a * nb + b] = p.prob(a) * ch.prob(b, a);
        }
    }
    JointDist::new(
        vec![p.alphabet().clone(), ch.output_alphabet().clone()],
        mass,
    )
}

/// An empirical type: exact symbol counts of one or more aligned
/// sequences of common length `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalType {
    axes: Vec<Alphabet>,
    counts: Vec<u64>,
    n: u64,
}

impl EmpiricalType {
    pub fn new(axes: Vec<Alphabet>, counts: Vec<u64>, n: u64) -> Result<Self> {
        let cells: usize = axes.iter().map(|a| a.size()).product();
        if n == 0 {
            return Err(AvcError::invalid("empirical type needs n >= 1"));
        }
        if counts.len() != cells {
            return Err(AvcError::invalid("count tensor does not match axes"));
        }
        if counts.iter().sum::<u64>() != n {
            return Err(AvcError::invalid("counts do not sum to n"));
        }
        Ok(EmpiricalType { axes, counts, n })
    }

    pub fn axes(&self) -> &[Alphabet] {
        &self.axes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Induced frequencies `counts / n`.
    pub fn freqs(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.n as f64)
            .collect()
    }

    /// Frequencies as a [`Dist`] (single-axis types only).
    pub fn as_dist(&self) -> Result<Dist> {
        if self.axes.len() != 1 {
            return Err(AvcError::invalid("as_dist needs a single-axis type"));
        }
        Dist::new(self.axes[0].clone(), self.freqs())
    }

    /// Frequencies as a [`JointDist`].
    pub fn as_joint(&self) -> Result<JointDist> {
        JointDist::new(self.axes.clone(), self.freqs())
    }

    /// Max-abs difference between induced frequencies and `target`.
    pub fn linf_to(&self, target: &[f64]) -> f64 {
        debug_assert_eq!(self.counts.len(), target.len());
        let n = self.n as f64;
        self.counts
            .iter()
            .zip(target)
            .map(|(&c, &t)| (c as f64 / n - t).abs())
            .fold(0.0, f64::max)
    }
}

/// Empirical type of a single sequence.
pub fn type_of(alphabet: &Alphabet, seq: &[usize]) -> Result<EmpiricalType> {
    if seq.is_empty() {
        return Err(AvcError::invalid("type of an empty sequence is undefined"));
    }
    let mut counts = vec![0u64; alphabet.size()];
    for &s in seq {
        if s >= alphabet.size() {
            return Err(AvcError::invalid("sequence symbol out of alphabet range"));
        }
        counts[s] += 1;
    }
    EmpiricalType::new(vec![alphabet.clone()], counts, seq.len() as u64)
}

/// Joint empirical type of two aligned sequences.
pub fn joint_type_of(
    alphabet_a: &Alphabet,
    seq_a: &[usize],
    alphabet_b: &Alphabet,
    seq_b: &[usize],
) -> Result<EmpiricalType> {
    if seq_a.is_empty() {
        return Err(AvcError::invalid("type of an empty sequence is undefined"));
    }
    if seq_a.len() != seq_b.len() {
        return Err(AvcError::invalid(format!(
            "joint type needs equal lengths, got {} and {}",
            seq_a.len(),
            seq_b.len()
        )));
    }
    let (na, nb) = (alphabet_a.size(), alphabet_b.size());
    let mut counts = vec![0u64; na * nb];
    for (&a, &b) in seq_a.iter().zip(seq_b) {
        if a >= na || b >= nb {
            return Err(AvcError::invalid("sequence symbol out of alphabet range"));
        }
        counts[a * nb + b] += 1;
    }
    EmpiricalType::new(
        vec![alphabet_a.clone(), alphabet_b.clone()],
        counts,
        seq_a.len() as u64,
    )
}

/// l-infinity typicality: true iff every cell of the type's frequency
/// tensor is within `eps` of the reference mass.
pub fn is_typical(t: &EmpiricalType, reference: &[f64], eps: f64) -> bool {
    t.linf_to(reference) <= eps + TYP_EDGE
}

/// All empirical types of denominator `n` over `alphabet`
/// (compositions of `n` into `|alphabet|` nonnegative parts).
pub fn enumerate_types(alphabet: &Alphabet, n: u64) -> Result<Vec<EmpiricalType>> {
    if n == 0 {
        return Err(AvcError::invalid("enumerate_types needs n >= 1"));
    }
    let k = alphabet.size();
    let mut out = Vec::new();
    let mut current = vec![0u64; k];
    fill_compositions(n, 0, &mut current, &mut |c| {
        out.push(
            EmpiricalType::new(vec![alphabet.clone()], c.to_vec(), n)
                .expect("compositions sum to n"),
        );
    });
    Ok(out)
}

/// Enumerates compositions of `n` into `current.len()` parts,
/// lexicographically by leading cells.
pub(crate) fn fill_compositions(n: u64, pos: usize, current: &mut Vec<u64>, f: &mut impl FnMut(&[u64])) {
    if pos == current.len() - 1 {
        current[pos] = n;
        f(current);
        return;
    }
    for v in (0..=n).rev() {
        current[pos] = v;
        fill_compositions(n - v, pos + 1, current, f);
    }
}

/// `n` i.i.d. draws from `p`, deterministic given `seed`.
pub fn sample_iid(p: &Dist, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = derive_rng(seed, &[0x11d]);
    (0..n).map(|_| sample_index(p.mass(), &mut rng)).collect()
}

/// Per-symbol independent channel draws, deterministic given `seed`.
pub fn sample_channel(ch: &Channel, input: &[usize], seed: u64) -> Vec<usize> {
    let mut rng = derive_rng(seed, &[0xc4a]);
    input
        .iter()
        .map(|&i| sample_index(ch.row(i).mass(), &mut rng))
        .collect()
}

pub(crate) fn sample_index(mass: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &m) in mass.iter().enumerate() {
        acc += m;
        if u < acc {
            return i;
        }
    }
    mass.len() - 1
}

/// `C(n + k - 1, k - 1)`: the number of types of denominator `n` over a
/// `k`-symbol alphabet.
pub fn type_count(k: usize, n: u64) -> u64 {
    let mut num = 1u128;
    let mut den = 1u128;
    for i in 1..k as u128 {
        num *= n as u128 + i;
        den *= i;
    }
    (num / den) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits() -> Alphabet {
        Alphabet::indexed(2)
    }

    fn h2(p: f64) -> f64 {
        entropy_raw(&[p, 1.0 - p])
    }

    #[test]
    fn entropy_endpoints() {
        let d = Dist::new(bits(), vec![1.0, 0.0]).unwrap();
        assert_eq!(entropy(&d), 0.0);
        let u = Dist::uniform(bits());
        assert!((entropy(&u) - 1.0).abs() < 1e-12);
        let skew = Dist::new(bits(), vec![0.9, 0.1]).unwrap();
        assert!((entropy(&skew) - 0.4690).abs() < 1e-4);
    }

    #[test]
    fn entropy_in_range() {
        let d = Dist::new(Alphabet::indexed(4), vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let h = entropy(&d);
        assert!(h >= 0.0 && h <= 2.0);
    }

    #[test]
    fn rejects_bad_mass() {
        assert!(Dist::new(bits(), vec![0.5, 0.4]).is_err());
        assert!(Dist::new(bits(), vec![1.1, -0.1]).is_err());
    }

    #[test]
    fn mutual_information_cases() {
        // independent uniform product
        let j = JointDist::new(vec![bits(), bits()], vec![0.25; 4]).unwrap();
        assert_eq!(mutual_information(&j).unwrap(), 0.0);
        // perfectly correlated
        let j = JointDist::new(vec![bits(), bits()], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((mutual_information(&j).unwrap() - 1.0).abs() < 1e-12);
        // uniform input through BSC(0.1): I = 1 - h(0.1)
        let j = compose(&Dist::uniform(bits()), &Channel::bsc(0.1).unwrap()).unwrap();
        assert!((mutual_information(&j).unwrap() - (1.0 - h2(0.1))).abs() < 1e-4);
        assert!((mutual_information(&j).unwrap() - 0.5310).abs() < 1e-4);
    }

    #[test]
    fn compose_and_marginal() {
        let p = Dist::new(bits(), vec![0.3, 0.7]).unwrap();
        // identity channel: diagonal joint
        let j = compose(&p, &Channel::identity(bits())).unwrap();
        assert_eq!(j.prob(&[0, 0]), 0.3);
        assert_eq!(j.prob(&[0, 1]), 0.0);
        assert_eq!(j.prob(&[1, 1]), 0.7);
        // marginal onto Z through identity recovers the input
        let mz = j.marginal_dist(1).unwrap();
        assert!(mz.linf_distance(&p) < 1e-12);
        // BSC(0.1) joint entries by direct arithmetic
        let j = compose(&p, &Channel::bsc(0.1).unwrap()).unwrap();
        assert!((j.prob(&[0, 0]) - 0.27).abs() < 1e-12);
        assert!((j.prob(&[0, 1]) - 0.03).abs() < 1e-12);
        assert!((j.prob(&[1, 0]) - 0.07).abs() < 1e-12);
        assert!((j.prob(&[1, 1]) - 0.63).abs() < 1e-12);
        // full-noise BSC: uniform product
        let j = compose(&Dist::uniform(bits()), &Channel::bsc(0.5).unwrap()).unwrap();
        for idx in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            assert!((j.prob(&idx) - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_of_product_recovers_factor() {
        let p = Dist::new(bits(), vec![0.2, 0.8]).unwrap();
        let q = Dist::new(bits(), vec![0.6, 0.4]).unwrap();
        let mut mass = vec![0.0; 4];
        for a in 0..2 {
            for b in 0..2 {
                mass[a * 2 + b] = p.prob(a) * q.prob(b);
            }
        }
        let j = JointDist::new(vec![bits(), bits()], mass).unwrap();
        assert!(j.marginal_dist(0).unwrap().linf_distance(&p) < 1e-12);
        assert!(j.marginal_dist(1).unwrap().linf_distance(&q) < 1e-12);
        assert!(j.marginal(&[4]).is_err());
    }

    #[test]
    fn types_and_typicality() {
        let t = type_of(&bits(), &[0, 1, 1, 0]).unwrap();
        assert_eq!(t.counts(), &[2, 2]);
        let t = type_of(&bits(), &[0, 0, 0]).unwrap();
        assert_eq!(t.counts(), &[3, 0]);
        let jt = joint_type_of(&bits(), &[0, 1], &bits(), &[1, 1]).unwrap();
        assert_eq!(jt.counts(), &[0, 1, 0, 1]);
        assert!(type_of(&bits(), &[]).is_err());
        assert!(joint_type_of(&bits(), &[0], &bits(), &[0, 1]).is_err());

        let t = type_of(&bits(), &[0, 1]).unwrap();
        assert!(is_typical(&t, &[0.5, 0.5], 0.0));
        assert!(!is_typical(&t, &[0.4, 0.6], 0.05));
        assert!(is_typical(&t, &[0.45, 0.55], 0.05));
    }

    #[test]
    fn type_enumeration_counts() {
        let ts = enumerate_types(&bits(), 2).unwrap();
        assert_eq!(ts.len(), 3);
        let counts: Vec<_> = ts.iter().map(|t| t.counts().to_vec()).collect();
        assert!(counts.contains(&vec![2, 0]));
        assert!(counts.contains(&vec![1, 1]));
        assert!(counts.contains(&vec![0, 2]));
        assert_eq!(enumerate_types(&bits(), 10).unwrap().len(), 11);
        assert_eq!(enumerate_types(&Alphabet::indexed(3), 4).unwrap().len(), 15);
        assert!(enumerate_types(&bits(), 0).is_err());
    }

    #[test]
    fn type_count_matches_enumeration() {
        for k in 1..=4usize {
            for n in [1u64, 2, 5, 16, 64] {
                let expect = enumerate_types(&Alphabet::indexed(k), n).unwrap().len() as u64;
                assert_eq!(type_count(k, n), expect, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn sampling_determinism_and_point_mass() {
        let p = Dist::point_mass(Alphabet::indexed(3), 1).unwrap();
        assert_eq!(sample_iid(&p, 5, 7), vec![1, 1, 1, 1, 1]);
        let ch = Channel::identity(bits());
        assert_eq!(sample_channel(&ch, &[0, 1, 0], 99), vec![0, 1, 0]);
        let q = Dist::new(bits(), vec![0.3, 0.7]).unwrap();
        assert_eq!(sample_iid(&q, 100, 5), sample_iid(&q, 100, 5));
        assert_ne!(sample_iid(&q, 100, 5), sample_iid(&q, 100, 6));
    }

    #[test]
    fn iid_types_concentrate() {
        // 10^5 draws from (0.3, 0.7) land within 0.01 in nearly every run
        let p = Dist::new(bits(), vec![0.3, 0.7]).unwrap();
        let mut hits = 0;
        for rep in 0..100 {
            let seq = sample_iid(&p, 100_000, 1000 + rep);
            let t = type_of(&bits(), &seq).unwrap();
            if is_typical(&t, p.mass(), 0.01) {
                hits += 1;
            }
        }
        assert!(hits >= 99, "only {hits}/100 runs were 0.01-typical");
    }
}
