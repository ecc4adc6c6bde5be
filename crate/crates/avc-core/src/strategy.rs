//! Shannon-strategy tables and assembly of the five-way joint law over
//! `(S, Z, U, X, Y)`.
//!
//! The auxiliary alphabet `U` is always the canonical enumeration of
//! all functions `Z -> X`, so the solver searches over `P(U|Z)` only
//! and never over maps separately.

use crate::error::AvcError;
use crate::prob::{mutual_information_raw, Alphabet, Channel, Dist, JointDist};
use crate::Result;

/// Guard on the strategy count |X|^|Z|.
const MAX_STRATEGIES: usize = 4096;

/// Guard on the dense joint tensor size |S||Z||U||X||Y|.
const MAX_JOINT_CELLS: usize = 10_000_000;

/// A deterministic map `(u, z) -> x` where `u` ranges over the
/// canonical enumeration of all functions `Z -> X`.
#[derive(Clone, Debug)]
pub struct StrategyTable {
    u_alphabet: Alphabet,
    z_alphabet: Alphabet,
    x_alphabet: Alphabet,
    /// Row-major `|U| x |Z|` table of x-indices.
    table: Vec<usize>,
}

impl StrategyTable {
    pub fn u_alphabet(&self) -> &Alphabet {
        &self.u_alphabet
    }

    pub fn z_alphabet(&self) -> &Alphabet {
        &self.z_alphabet
    }

    pub fn x_alphabet(&self) -> &Alphabet {
        &self.x_alphabet
    }

    pub fn num_strategies(&self) -> usize {
        self.u_alphabet.size()
    }

    /// The x-index `x(u, z)`.
    pub fn apply(&self, u: usize, z: usize) -> usize {
        self.table[u * self.z_alphabet.size() + z]
    }
}

/// Enumerates all `|X|^|Z|` functions `Z -> X` in canonical order: `u`
/// is read as a base-`|X|` numeral whose most significant digit is the
/// image of the first z-symbol.
pub fn canonical_strategies(x_alphabet: &Alphabet, z_alphabet: &Alphabet) -> Result<StrategyTable> {
    let nx = x_alphabet.size();
    let nz = z_alphabet.size();
    let mut count = 1usize;
    for _ in 0..nz {
        count = count
            .checked_mul(nx)
            .filter(|&c| c <= MAX_STRATEGIES)
            .ok_or_else(|| {
                AvcError::CapacityLimit(format!(
                    "|X|^|Z| = {nx}^{nz} exceeds the strategy guard {MAX_STRATEGIES}"
                ))
            })?;
    }
    let mut table = Vec::with_capacity(count * nz);
    let mut labels = Vec::with_capacity(count);
    for u in 0..count {
        let mut digits = vec![0usize; nz];
        let mut rem = u;
        for z in (0..nz).rev() {
            digits[z] = rem % nx;
            rem /= nx;
        }
        labels.push(
            digits
                .iter()
                .map(|&x| x_alphabet.label(x))
                .collect::<Vec<_>>()
                .join(""),
        );
        table.extend_from_slice(&digits);
    }
    Ok(StrategyTable {
        u_alphabet: Alphabet::new(labels)?,
        z_alphabet: z_alphabet.clone(),
        x_alphabet: x_alphabet.clone(),
        table,
    })
}

/// The fixed channel pair defining a problem instance: the state
/// channel `W(y | x, s)` and the encoder's observation channel
/// `obs(z | s)`.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    x_alphabet: Alphabet,
    s_alphabet: Alphabet,
    y_alphabet: Alphabet,
    z_alphabet: Alphabet,
    /// `W` rows are indexed by the product (x, s), x major.
    w: Channel,
    obs: Channel,
}

impl SystemSpec {
    pub fn new(
        x_alphabet: Alphabet,
        s_alphabet: Alphabet,
        y_alphabet: Alphabet,
        z_alphabet: Alphabet,
        w: Channel,
        obs: Channel,
    ) -> Result<Self> {
        let pair = x_alphabet.product(&s_alphabet);
        if w.input_alphabet() != &pair {
            return Err(AvcError::AlphabetMismatch(
                "W input alphabet must be the (x, s) product alphabet".into(),
            ));
        }
        if w.output_alphabet() != &y_alphabet {
            return Err(AvcError::AlphabetMismatch(
                "W output alphabet differs from Y".into(),
            ));
        }
        if obs.input_alphabet() != &s_alphabet {
            return Err(AvcError::AlphabetMismatch(
                "obs input alphabet differs from S".into(),
            ));
        }
        if obs.output_alphabet() != &z_alphabet {
            return Err(AvcError::AlphabetMismatch(
                "obs output alphabet differs from Z".into(),
            ));
        }
        Ok(SystemSpec {
            x_alphabet,
            s_alphabet,
            y_alphabet,
            z_alphabet,
            w,
            obs,
        })
    }

    /// Builds a spec from dense tables: `w_rows[x][s]` is a Dist over Y
    /// and `obs_rows[s]` a Dist over Z.
    pub fn from_tables(
        nx: usize,
        ns: usize,
        w_rows: &[Vec<f64>],
        obs_rows: &[Vec<f64>],
    ) -> Result<Self> {
        if w_rows.len() != nx * ns || obs_rows.len() != ns {
            return Err(AvcError::invalid("table row counts do not match nx, ns"));
        }
        let ny = w_rows[0].len();
        let nz = obs_rows[0].len();
        let x = Alphabet::indexed(nx);
        let s = Alphabet::indexed(ns);
        let y = Alphabet::indexed(ny);
        let z = Alphabet::indexed(nz);
        let w = Channel::from_rows(x.product(&s), y.clone(), w_rows)?;
        let obs = Channel::from_rows(s.clone(), z.clone(), obs_rows)?;
        SystemSpec::new(x, s, y, z, w, obs)
    }

    pub fn x_alphabet(&self) -> &Alphabet {
        &self.x_alphabet
    }

    pub fn s_alphabet(&self) -> &Alphabet {
        &self.s_alphabet
    }

    pub fn y_alphabet(&self) -> &Alphabet {
        &self.y_alphabet
    }

    pub fn z_alphabet(&self) -> &Alphabet {
        &self.z_alphabet
    }

    pub fn w(&self) -> &Channel {
        &self.w
    }

    pub fn obs(&self) -> &Channel {
        &self.obs
    }

    /// `W(y | x, s)`.
    pub fn w_prob(&self, y: usize, x: usize, s: usize) -> f64 {
        self.w.prob(y, x * self.s_alphabet.size() + s)
    }

    /// `obs(z | s)`.
    pub fn obs_prob(&self, z: usize, s: usize) -> f64 {
        self.obs.prob(z, s)
    }

    /// Canonical strategy table for this spec's X and Z alphabets.
    pub fn strategies(&self) -> Result<StrategyTable> {
        canonical_strategies(&self.x_alphabet, &self.z_alphabet)
    }
}

/// The joint law `q_s(s) obs(z|s) p(u|z) 1{x = strat(u,z)} W(y|x,s)`
/// over axes `(S, Z, U, X, Y)` in that order.
pub fn assemble_joint(
    spec: &SystemSpec,
    q_s: &Dist,
    p_u_given_z: &Channel,
    strat: &StrategyTable,
) -> Result<JointDist> {
    check_strategy_args(spec, q_s, p_u_given_z, strat)?;
    let ns = spec.s_alphabet.size();
    let nz = spec.z_alphabet.size();
    let nu = strat.num_strategies();
    let nx = spec.x_alphabet.size();
    let ny = spec.y_alphabet.size();
    let cells = ns * nz * nu * nx * ny;
    if cells > MAX_JOINT_CELLS {
        return Err(AvcError::CapacityLimit(format!(
            "joint tensor would need {cells} cells (guard {MAX_JOINT_CELLS})"
        )));
    }
    let mut mass = vec![0.0; cells];
    for s in 0..ns {
        let qs = q_s.prob(s);
        if qs == 0.0 {
            continue;
        }
        for z in 0..nz {
            let pz = spec.obs_prob(z, s);
            if pz == 0.0 {
                continue;
            }
            for u in 0..nu {
                let pu = p_u_given_z.prob(u, z);
                if pu == 0.0 {
                    continue;
                }
                let x = strat.apply(u, z);
                let base = (((s * nz + z) * nu + u) * nx + x) * ny;
                let w = qs * pz * pu;
                for y in 0..ny {
                    mass[base + y] = w * spec.w_prob(y, x, s);
                }
            }
        }
    }
    JointDist::new(
        vec![
            spec.s_alphabet.clone(),
            spec.z_alphabet.clone(),
            strat.u_alphabet().clone(),
            spec.x_alphabet.clone(),
            spec.y_alphabet.clone(),
        ],
        mass,
    )
}

/// `I(U;Y) - I(U;Z)` under the assembled joint.
pub fn objective(
    spec: &SystemSpec,
    q_s: &Dist,
    p_u_given_z: &Channel,
    strat: &StrategyTable,
) -> Result<f64> {
    check_strategy_args(spec, q_s, p_u_given_z, strat)?;
    let (iuy, iuz) = objective_parts(spec, q_s.mass(), p_u_given_z, strat);
    Ok(iuy - iuz)
}

/// Computes `(I(U;Y), I(U;Z))` without materializing the five-way
/// tensor; the solver calls this in tight loops.
pub(crate) fn objective_parts(
    spec: &SystemSpec,
    q_s: &[f64],
    p_u_given_z: &Channel,
    strat: &StrategyTable,
) -> (f64, f64) {
    let ns = spec.s_alphabet.size();
    let nz = spec.z_alphabet.size();
    let nu = strat.num_strategies();
    let ny = spec.y_alphabet.size();

    let mut juz = vec![0.0; nu * nz];
    let mut juy = vec![0.0; nu * ny];
    for s in 0..ns {
        let qs = q_s[s];
        if qs == 0.0 {
            continue;
        }
        for z in 0..nz {
            let psz = qs * spec.obs_prob(z, s);
            if psz == 0.0 {
                continue;
            }
            for u in 0..nu {
                let m = psz * p_u_given_z.prob(u, z);
                if m == 0.0 {
                    continue;
                }
                juz[u * nz + z] += m;
                let x = strat.apply(u, z);
                for y in 0..ny {
                    juy[u * ny + y] += m * spec.w_prob(y, x, s);
                }
            }
        }
    }
    (
        mutual_information_raw(&juy, nu, ny),
        mutual_information_raw(&juz, nu, nz),
    )
}

fn check_strategy_args(
    spec: &SystemSpec,
    q_s: &Dist,
    p_u_given_z: &Channel,
    strat: &StrategyTable,
) -> Result<()> {
    if q_s.alphabet() != &spec.s_alphabet {
        return Err(AvcError::AlphabetMismatch(
            "q_s alphabet differs from S".into(),
        ));
    }
    if p_u_given_z.input_alphabet() != &spec.z_alphabet {
        return Err(AvcError::AlphabetMismatch(
            "P(U|Z) input alphabet differs from Z".into(),
        ));
    }
    if p_u_given_z.output_alphabet() != strat.u_alphabet() {
        return Err(AvcError::AlphabetMismatch(
            "P(U|Z) output alphabet differs from the strategy alphabet".into(),
        ));
    }
    if strat.z_alphabet() != &spec.z_alphabet || strat.x_alphabet() != &spec.x_alphabet {
        return Err(AvcError::AlphabetMismatch(
            "strategy table alphabets differ from the spec".into(),
        ));
    }
    Ok(())
}

/// The XOR benchmark channel `Y = X xor S` with observation `obs_rows`
/// (2 rows over a binary Z).
pub fn xor_spec(obs_rows: &[Vec<f64>]) -> Result<SystemSpec> {
    let w_rows = vec![
        vec![1.0, 0.0], // x=0, s=0
        vec![0.0, 1.0], // x=0, s=1
        vec![0.0, 1.0], // x=1, s=0
        vec![1.0, 0.0], // x=1, s=1
    ];
    SystemSpec::from_tables(2, 2, &w_rows, obs_rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{compose, mutual_information};

    fn bits() -> Alphabet {
        Alphabet::indexed(2)
    }

    fn uniform_p_u(strat: &StrategyTable, nz: usize) -> Channel {
        let u = strat.u_alphabet().clone();
        let z = Alphabet::indexed(nz);
        let rows = vec![Dist::uniform(u.clone()); nz];
        Channel::new(z, u, rows).unwrap()
    }

    #[test]
    fn canonical_enumeration_order() {
        let t = canonical_strategies(&bits(), &Alphabet::indexed(1)).unwrap();
        assert_eq!(t.num_strategies(), 2);
        assert_eq!(t.apply(0, 0), 0);
        assert_eq!(t.apply(1, 0), 1);

        let t = canonical_strategies(&bits(), &bits()).unwrap();
        assert_eq!(t.num_strategies(), 4);
        // u=0: constant 0; u=1: identity; u=2: flip; u=3: constant 1
        assert_eq!((t.apply(0, 0), t.apply(0, 1)), (0, 0));
        assert_eq!((t.apply(1, 0), t.apply(1, 1)), (0, 1));
        assert_eq!((t.apply(2, 0), t.apply(2, 1)), (1, 0));
        assert_eq!((t.apply(3, 0), t.apply(3, 1)), (1, 1));

        let t = canonical_strategies(&Alphabet::indexed(3), &bits()).unwrap();
        assert_eq!(t.num_strategies(), 9);

        assert!(canonical_strategies(&Alphabet::indexed(5), &Alphabet::indexed(8)).is_err());
    }

    #[test]
    fn degenerate_joint_is_point_mass() {
        // identity W in x (ignoring s), identity obs, point-mass q_s
        let w_rows = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let obs_rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let spec = SystemSpec::from_tables(2, 2, &w_rows, &obs_rows).unwrap();
        let strat = spec.strategies().unwrap();
        let q = Dist::point_mass(bits(), 0).unwrap();
        // P(U|Z) point mass on the constant-0 strategy
        let u = strat.u_alphabet().clone();
        let rows = vec![Dist::point_mass(u.clone(), 0).unwrap(); 2];
        let p_u = Channel::new(bits(), u, rows).unwrap();
        let j = assemble_joint(&spec, &q, &p_u, &strat).unwrap();
        assert_eq!(j.prob(&[0, 0, 0, 0, 0]), 1.0);
        assert_eq!(j.mass().iter().filter(|&&m| m > 0.0).count(), 1);
    }

    #[test]
    fn xor_joint_marginals() {
        let spec = xor_spec(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let strat = spec.strategies().unwrap();
        let q = Dist::uniform(bits());

        // uniform independent P(U|Z): with strat index 2 being the flip
        // map; restrict mass to {identity, flip} = {u xor z} family.
        // First the plain uniform-over-all-strategies case.
        let p_u = uniform_p_u(&strat, 2);
        let j = assemble_joint(&spec, &q, &p_u, &strat).unwrap();
        // support constraint
        let dims = j.dims();
        let mut idx = vec![0usize; 5];
        for &m in j.mass() {
            let (z, u, x) = (idx[1], idx[2], idx[3]);
            if x != strat.apply(u, z) {
                assert_eq!(m, 0.0);
            }
            for d in (0..5).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        // (S, Z) marginal equals compose(q, obs)
        let sz = j.marginal(&[0, 1]).unwrap();
        let expect = compose(&q, spec.obs()).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((sz.prob(&[a, b]) - expect.prob(&[a, b])).abs() < 1e-12);
            }
        }

        // P(U|Z) putting mass only on u = "z xor bit": uniform over
        // {identity, flip} makes X = U' xor Z with U' uniform, so
        // Y = U' and the (U, Y) marginal is a permuted diagonal.
        let u_alpha = strat.u_alphabet().clone();
        let half = Dist::new(u_alpha.clone(), vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let p_u = Channel::new(bits(), u_alpha, vec![half.clone(), half]).unwrap();
        let j = assemble_joint(&spec, &q, &p_u, &strat).unwrap();
        let juy = j.marginal(&[2, 4]).unwrap();
        assert!((mutual_information(&juy).unwrap() - 1.0).abs() < 1e-12);
        let val = objective(&spec, &q, &p_u, &strat).unwrap();
        assert!((val - 1.0).abs() < 1e-12, "objective {val}");
    }

    #[test]
    fn identity_p_u_gives_full_iuz() {
        let spec = xor_spec(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let strat = spec.strategies().unwrap();
        let q = Dist::uniform(bits());
        // U = Z deterministically (z=0 -> constant-0 strat, z=1 -> constant-1)
        let u_alpha = strat.u_alphabet().clone();
        let rows = vec![
            Dist::point_mass(u_alpha.clone(), 0).unwrap(),
            Dist::point_mass(u_alpha.clone(), 3).unwrap(),
        ];
        let p_u = Channel::new(bits(), u_alpha, rows).unwrap();
        let j = assemble_joint(&spec, &q, &p_u, &strat).unwrap();
        let juz = j.marginal(&[2, 1]).unwrap();
        assert!((mutual_information(&juz).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_degenerate_cases() {
        // XOR with u xor z family is constantly 1 in q_s
        let spec = xor_spec(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let strat = spec.strategies().unwrap();
        let u_alpha = strat.u_alphabet().clone();
        let half = Dist::new(u_alpha.clone(), vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let p_u = Channel::new(bits(), u_alpha.clone(), vec![half.clone(), half]).unwrap();
        for k in 0..=8 {
            let q = Dist::new(bits(), vec![k as f64 / 8.0, 1.0 - k as f64 / 8.0]).unwrap();
            let v = objective(&spec, &q, &p_u, &strat).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "q index {k} gave {v}");
        }

        // uniform-independent P(U|Z) with a constant strategy: objective 0
        let rows = vec![Dist::point_mass(u_alpha.clone(), 0).unwrap(); 2];
        let p_const = Channel::new(bits(), u_alpha.clone(), rows).unwrap();
        let q = Dist::uniform(bits());
        assert!(objective(&spec, &q, &p_const, &strat).unwrap().abs() < 1e-12);

        // constant-output W: objective 0 for every argument
        let w_rows = vec![vec![0.5, 0.5]; 4];
        let obs_rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let spec = SystemSpec::from_tables(2, 2, &w_rows, &obs_rows).unwrap();
        let strat = spec.strategies().unwrap();
        let u_alpha = strat.u_alphabet().clone();
        let half = Dist::new(u_alpha.clone(), vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let p_u = Channel::new(bits(), u_alpha, vec![half.clone(), half]).unwrap();
        let v = objective(&spec, &q, &p_u, &strat).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn markov_property_of_assembled_joint() {
        let spec = xor_spec(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let strat = spec.strategies().unwrap();
        let q = Dist::new(bits(), vec![0.3, 0.7]).unwrap();
        let p_u = uniform_p_u(&strat, 2);
        let j = assemble_joint(&spec, &q, &p_u, &strat).unwrap();
        let dims = j.dims();
        // conditional of Y given (s, z, u, x) equals the W row wherever defined
        for s in 0..dims[0] {
            for z in 0..dims[1] {
                for u in 0..dims[2] {
                    for x in 0..dims[3] {
                        let tot: f64 = (0..dims[4]).map(|y| j.prob(&[s, z, u, x, y])).sum();
                        if tot < 1e-15 {
                            continue;
                        }
                        for y in 0..dims[4] {
                            let cond = j.prob(&[s, z, u, x, y]) / tot;
                            assert!((cond - spec.w_prob(y, x, s)).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn iuz_constant_on_fixed_pz_family() {
        // obs = BSC(0.2); two q_s with the same z-marginal must give
        // identical I(U;Z).
        let spec = xor_spec(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let strat = spec.strategies().unwrap();
        let u_alpha = strat.u_alphabet().clone();
        let rows = vec![
            Dist::new(u_alpha.clone(), vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
            Dist::new(u_alpha.clone(), vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        ];
        let p_u = Channel::new(bits(), u_alpha, rows).unwrap();
        // with symmetric obs, q and its flip share the z-marginal only
        // at the uniform point; use the uniform q against itself under
        // component relabeling instead: q = (0.5, 0.5) is the whole
        // fixed-P_Z family here, so perturb along the null space of obs
        // restricted to the simplex. For binary obs the polytope over
        // q_s with fixed P_Z is a single point unless obs rows are
        // identical; make rows identical to get a free q_s.
        let spec2 = xor_spec(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let (_, iuz_a) = objective_parts(&spec2, &[0.2, 0.8], &p_u, &strat);
        let (_, iuz_b) = objective_parts(&spec2, &[0.9, 0.1], &p_u, &strat);
        assert!((iuz_a - iuz_b).abs() < 1e-12);
        let _ = spec;
    }
}
