//! De-randomization: a polynomial-size multicode family in place of
//! unrestricted common randomness, and a concatenated construction
//! that moves the code choice into the encoder's private randomness
//! behind a state-oblivious prefix.
//!
//! The multicode draws the per-trial code uniformly from `n^2`
//! independently seeded codes, so the shared randomness shrinks to
//! `2 log n` bits at (up to a factor of two) the same error. The
//! concatenated code then announces the privately chosen code index
//! through a repetition-coded prefix, after which no shared
//! randomness is read at all: the encoder's output is a pure function
//! of the message, the state observation, and its private seed.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;

use crate::error::AvcError;
use crate::prob::type_of;
use crate::rng::derive_rng;
use crate::sim::{
    adversary_states, encode, resolve_adversary, summarize, Adversary, CodeDescription,
    CodeParams, MonteCarloSummary, RepetitionCode, Simulator, TrialEvent, TrialRecord,
};
use crate::solver;
use crate::strategy::SystemSpec;
use crate::Result;

const TAG_CODE_SEED: u64 = 0x5eed;
const TAG_CODE_PICK: u64 = 0x91c4;
const TAG_MC_MSG: u64 = 0x3e56;
const TAG_PRIVATE: u64 = 0x9214;
const TAG_OBS: u64 = 0x0b5f;
const TAG_CHANNEL: u64 = 0xc4a2;

/// A family of independently seeded codes sharing one parameter set.
pub struct MultiCode {
    spec: SystemSpec,
    params: CodeParams,
    seeds: Vec<u64>,
    sims: Mutex<HashMap<u64, Arc<Simulator>>>,
}

/// One multicode transmission: which code was drawn plus the inner
/// trial record.
#[derive(Clone, Debug)]
pub struct MultiCodeRecord {
    pub code_index: u64,
    pub inner: TrialRecord,
}

impl MultiCodeRecord {
    pub const CSV_HEADER: &'static str =
        "trial,m,event,error,n,rate,adversary_kind,seed,K,prefix_len,k,k_hat";

    pub fn csv_row(
        &self,
        n: usize,
        rate: f64,
        adversary_kind: &str,
        seed: u64,
        num_codes: u64,
    ) -> String {
        format!(
            "{},{},{},{},{}",
            self.inner.csv_row(n, rate, adversary_kind, seed),
            num_codes,
            0,
            self.code_index,
            self.code_index
        )
    }
}

/// Draws a family of `num_codes` codes (default `n^2`) with seeds
/// derived from the master seed.
pub fn sample_multicode(
    spec: &SystemSpec,
    params: &CodeParams,
    num_codes: Option<u64>,
) -> Result<MultiCode> {
    let k = num_codes.unwrap_or((params.n * params.n) as u64);
    if k == 0 {
        return Err(AvcError::invalid("multicode needs at least one code"));
    }
    if k > 1 << 22 {
        return Err(AvcError::CapacityLimit(format!(
            "{k} component codes cannot be indexed"
        )));
    }
    let mut rng = derive_rng(params.seed, &[TAG_CODE_SEED]);
    let seeds: Vec<u64> = (0..k).map(|_| rng.gen()).collect();
    // validate the parameter set once up front
    Simulator::new(spec, params)?;
    Ok(MultiCode {
        spec: spec.clone(),
        params: params.clone(),
        seeds,
        sims: Mutex::new(HashMap::new()),
    })
}

impl MultiCode {
    pub fn num_codes(&self) -> u64 {
        self.seeds.len() as u64
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    /// The component code's simulator, built on first use.
    pub fn simulator(&self, code_index: u64) -> Result<Arc<Simulator>> {
        if code_index >= self.num_codes() {
            return Err(AvcError::invalid("code index out of range"));
        }
        if let Some(sim) = self.sims.lock().unwrap().get(&code_index) {
            return Ok(sim.clone());
        }
        let mut params = self.params.clone();
        params.seed = self.seeds[code_index as usize];
        let sim = Arc::new(Simulator::new(&self.spec, &params)?);
        Ok(self
            .sims
            .lock()
            .unwrap()
            .entry(code_index)
            .or_insert(sim)
            .clone())
    }

    /// Monte Carlo over the family: each trial draws a uniform code
    /// index (the reduced shared randomness) and a uniform message.
    pub fn evaluate(
        &self,
        adversary: &Adversary,
        trials: u64,
        shared_seed: u64,
    ) -> Result<(MonteCarloSummary, Vec<MultiCodeRecord>)> {
        if trials == 0 {
            return Err(AvcError::invalid("trial count must be at least 1"));
        }
        let message_space = Simulator::new(&self.spec, &self.params)?.message_space();
        let records: Vec<MultiCodeRecord> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut pick = derive_rng(shared_seed, &[TAG_CODE_PICK, t]);
                let j = pick.gen_range(0..self.num_codes());
                let mut mrng = derive_rng(shared_seed, &[TAG_MC_MSG, t]);
                let m = mrng.gen_range(1..=message_space);
                let sim = self.simulator(j)?;
                Ok(MultiCodeRecord {
                    code_index: j,
                    inner: sim.run_trial(adversary, m, t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let inner: Vec<TrialRecord> = records.iter().map(|r| r.inner.clone()).collect();
        Ok((summarize(&inner), records))
    }
}

/// Convenience wrapper matching the one-shot simulation entry points.
pub fn evaluate_multicode(
    mc: &MultiCode,
    adversary: &Adversary,
    trials: u64,
    shared_seed: u64,
) -> Result<(MonteCarloSummary, Vec<MultiCodeRecord>)> {
    mc.evaluate(adversary, trials, shared_seed)
}

/// Stochastic-encoder concatenation: repetition-coded code-index
/// prefix plus a multicode body.
pub struct ConcatenatedCode {
    mc: MultiCode,
    prefix: RepetitionCode,
}

/// One concatenated transmission.
#[derive(Clone, Debug)]
pub struct ConcatRecord {
    pub code_index: u64,
    pub code_index_hat: u64,
    pub prefix_len: usize,
    pub inner: TrialRecord,
}

impl ConcatRecord {
    pub const CSV_HEADER: &'static str = MultiCodeRecord::CSV_HEADER;

    pub fn csv_row(
        &self,
        n: usize,
        rate: f64,
        adversary_kind: &str,
        seed: u64,
        num_codes: u64,
    ) -> String {
        format!(
            "{},{},{},{},{}",
            self.inner.csv_row(n, rate, adversary_kind, seed),
            num_codes,
            self.prefix_len,
            self.code_index,
            self.code_index_hat
        )
    }
}

/// Builds the concatenated code. Refuses channels whose randomized
/// coding capacity is not clearly positive; the construction has
/// nothing to achieve there and the prefix analysis needs a positive
/// rate target.
pub fn concatenate(
    spec: &SystemSpec,
    params: &CodeParams,
    num_codes: Option<u64>,
) -> Result<ConcatenatedCode> {
    let cap = solver::capacity(spec, 8, 1e-4)?;
    if cap.lower_bound <= 0.02 {
        return Err(AvcError::invalid(format!(
            "concatenation requires positive capacity; lower bound {:.4}",
            cap.lower_bound
        )));
    }
    let mc = sample_multicode(spec, params, num_codes)?;
    let rep = (params.n as f64).sqrt().ceil() as usize;
    let prefix = RepetitionCode::new(spec, mc.num_codes(), rep)?;
    Ok(ConcatenatedCode { mc, prefix })
}

impl ConcatenatedCode {
    pub fn multicode(&self) -> &MultiCode {
        &self.mc
    }

    pub fn prefix(&self) -> &RepetitionCode {
        &self.prefix
    }

    pub fn total_len(&self) -> usize {
        self.mc.params.n + self.prefix.len()
    }

    fn description(&self, shared_seed: u64) -> CodeDescription {
        CodeDescription {
            n: self.mc.params.n,
            total_len: self.total_len(),
            rate: self.mc.params.rate,
            seed: shared_seed,
        }
    }

    /// The encoder map: message, observation, and private seed in;
    /// code index and full channel input out. Deliberately takes no
    /// shared-randomness argument, so the output cannot depend on one.
    pub fn encode_trial(
        &self,
        m: u64,
        z: &[usize],
        trial: u64,
        private_seed: u64,
    ) -> Result<(u64, Vec<usize>)> {
        let params = &self.mc.params;
        if z.len() != params.n {
            return Err(AvcError::invalid("observation length differs from n"));
        }
        let mut prng = derive_rng(private_seed, &[TAG_PRIVATE, trial]);
        let k = prng.gen_range(0..self.mc.num_codes());
        let sim = self.mc.simulator(k)?;
        let t_z = type_of(self.mc.spec.z_alphabet(), z)?;
        let cb = sim.codebook_for(&t_z)?;
        let enc = encode(&self.mc.spec, &cb, params, m, z, trial)?;
        let mut x = self.prefix.encode(k);
        x.extend_from_slice(&enc.x);
        Ok((k, x))
    }

    /// Runs one concatenated transmission. `shared_seed` drives only
    /// the adversary and channel noise; the encoder reads
    /// `private_seed` alone.
    pub fn run_trial(
        &self,
        adversary: &Adversary,
        m: u64,
        trial: u64,
        private_seed: u64,
        shared_seed: u64,
    ) -> Result<ConcatRecord> {
        let spec = &self.mc.spec;
        let params = &self.mc.params;
        let plen = self.prefix.len();
        let strat = spec.strategies()?;
        let desc = self.description(shared_seed);
        let resolved = resolve_adversary(spec, &strat, adversary, desc.total_len)?;
        let s_all = adversary_states(spec, &resolved, &desc, shared_seed, trial)?;
        let mut obs_rng = derive_rng(shared_seed, &[TAG_OBS, trial]);
        let z_all: Vec<usize> = s_all
            .iter()
            .map(|&si| crate::prob::sample_index(spec.obs().row(si).mass(), &mut obs_rng))
            .collect();
        let (s_pre, s) = s_all.split_at(plen);
        let (_z_pre, z) = z_all.split_at(plen);

        // encoder: private code choice, then the component encoder
        let mut prng = derive_rng(private_seed, &[TAG_PRIVATE, trial]);
        let k = prng.gen_range(0..self.mc.num_codes());
        let sim = self.mc.simulator(k)?;
        let t_z = type_of(spec.z_alphabet(), z)?;
        let cb = sim.codebook_for(&t_z)?;
        let enc = encode(spec, &cb, params, m, z, trial)?;
        let x_pre = self.prefix.encode(k);

        let mut ch_rng = derive_rng(shared_seed, &[TAG_CHANNEL, trial]);
        let ns = spec.s_alphabet().size();
        let mut sample_y = |x: &[usize], s: &[usize]| -> Vec<usize> {
            x.iter()
                .zip(s)
                .map(|(&xi, &si)| {
                    crate::prob::sample_index(spec.w().row(xi * ns + si).mass(), &mut ch_rng)
                })
                .collect()
        };
        let y_pre = sample_y(&x_pre, s_pre);
        let y = sample_y(&enc.x, s);

        let k_hat = self.prefix.decode(&y_pre);
        let (decoded, e_dec1, e_dec2) = if k_hat == k {
            sim.decode_trial(&cb, &enc, m, &y, trial)?
        } else {
            // the decoder works against a different component code and
            // cannot contain the transmitted codeword
            (0, true, false)
        };
        let error = decoded != m;
        let e_enc = enc.fallback;
        let event = if !error {
            TrialEvent::None
        } else if e_enc {
            TrialEvent::Enc
        } else if e_dec1 {
            TrialEvent::Dec1
        } else {
            TrialEvent::Dec2
        };
        Ok(ConcatRecord {
            code_index: k,
            code_index_hat: k_hat,
            prefix_len: plen,
            inner: TrialRecord {
                trial,
                m,
                s: s.to_vec(),
                z: z.to_vec(),
                u: enc.u.clone(),
                x: enc.x.clone(),
                y,
                chosen: enc.chosen,
                fallback: enc.fallback,
                decoded,
                error,
                event,
                e_enc,
                e_dec1,
                e_dec2: e_dec2 || (error && !e_enc && !e_dec1),
            },
        })
    }

    /// Monte Carlo over the concatenated code with uniform messages.
    pub fn monte_carlo(
        &self,
        adversary: &Adversary,
        trials: u64,
        private_seed: u64,
        shared_seed: u64,
    ) -> Result<(MonteCarloSummary, Vec<ConcatRecord>)> {
        if trials == 0 {
            return Err(AvcError::invalid("trial count must be at least 1"));
        }
        let message_space = Simulator::new(&self.mc.spec, &self.mc.params)?.message_space();
        let records: Vec<ConcatRecord> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut mrng = derive_rng(shared_seed, &[TAG_MC_MSG, t]);
                let m = mrng.gen_range(1..=message_space);
                self.run_trial(adversary, m, t, private_seed, shared_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let inner: Vec<TrialRecord> = records.iter().map(|r| r.inner.clone()).collect();
        Ok((summarize(&inner), records))
    }
}

/// Empirical prefix error: fraction of trials whose code index was
/// misannounced.
pub fn prefix_error(records: &[ConcatRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records
        .iter()
        .filter(|r| r.code_index_hat != r.code_index)
        .count() as f64
        / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{Alphabet, Dist};
    use crate::strategy::xor_spec;

    fn xor_identity() -> SystemSpec {
        xor_spec(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn echo_spec() -> SystemSpec {
        let w_rows = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ];
        SystemSpec::from_tables(2, 2, &w_rows, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn uniform_adversary() -> Adversary {
        Adversary::Iid(Dist::uniform(Alphabet::indexed(2)))
    }

    #[test]
    fn multicode_family_shape() {
        let params = CodeParams::new(16, 0.25, 3).unwrap();
        let mc = sample_multicode(&xor_identity(), &params, None).unwrap();
        assert_eq!(mc.num_codes(), 256);
        let distinct: std::collections::HashSet<u64> = mc.seeds().iter().copied().collect();
        assert!(distinct.len() > 250);
    }

    #[test]
    fn multicode_evaluation_is_deterministic() {
        let params = CodeParams::new(32, 0.25, 5).unwrap();
        let mc = sample_multicode(&xor_identity(), &params, Some(16)).unwrap();
        let (a, ra) = mc.evaluate(&uniform_adversary(), 40, 77).unwrap();
        let (b, rb) = mc.evaluate(&uniform_adversary(), 40, 77).unwrap();
        assert_eq!(a.errors, b.errors);
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.code_index, y.code_index);
            assert_eq!(x.inner.decoded, y.inner.decoded);
        }
        // changing the shared seed changes the code draw
        let (_, rc) = mc.evaluate(&uniform_adversary(), 40, 78).unwrap();
        assert!(ra.iter().zip(&rc).any(|(x, y)| x.code_index != y.code_index));
    }

    #[test]
    fn multicode_tracks_randomized_error() {
        let spec = xor_identity();
        let params = CodeParams::new(64, 0.25, 9).unwrap();
        let (rand_summary, _) =
            crate::sim::monte_carlo(&spec, &params, &uniform_adversary(), 60).unwrap();
        let mc = sample_multicode(&spec, &params, None).unwrap();
        let (mc_summary, _) = mc.evaluate(&uniform_adversary(), 60, 123).unwrap();
        assert!(
            mc_summary.error_rate <= 2.0 * rand_summary.error_rate + 0.25,
            "multicode {} vs randomized {}",
            mc_summary.error_rate,
            rand_summary.error_rate
        );
    }

    #[test]
    fn concatenate_refuses_zero_capacity() {
        // constant observation: the jammer can simulate a uniform
        // state and the capacity is zero
        let spec = xor_spec(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let params = CodeParams::new(32, 0.25, 7).unwrap();
        assert!(concatenate(&spec, &params, Some(16)).is_err());
    }

    #[test]
    fn concatenated_code_round_trip() {
        let spec = echo_spec();
        let params = CodeParams::new(64, 0.25, 11).unwrap();
        let code = concatenate(&spec, &params, Some(16)).unwrap();
        assert_eq!(code.prefix().num_messages, 16);
        let (summary, records) = code
            .monte_carlo(&uniform_adversary(), 50, 0xdeed, 0xbead)
            .unwrap();
        // the echo channel announces the prefix perfectly
        assert_eq!(prefix_error(&records), 0.0);
        for r in &records {
            assert_eq!(r.code_index_hat, r.code_index);
        }
        // multicode comparison bound
        let (mc_summary, _) = code.multicode().evaluate(&uniform_adversary(), 50, 0xbead).unwrap();
        assert!(
            summary.error_rate
                <= mc_summary.error_rate + prefix_error(&records) + 0.25,
            "concat {} vs multicode {}",
            summary.error_rate,
            mc_summary.error_rate
        );
    }

    #[test]
    fn encoder_reads_no_shared_randomness() {
        let spec = echo_spec();
        let params = CodeParams::new(32, 0.25, 13).unwrap();
        let code = concatenate(&spec, &params, Some(8)).unwrap();
        let z: Vec<usize> = (0..32).map(|i| i % 2).collect();
        let (k1, x1) = code.encode_trial(3, &z, 5, 0xfeed).unwrap();
        // interleave runs with different shared seeds, then re-encode
        code.monte_carlo(&uniform_adversary(), 10, 0xfeed, 1).unwrap();
        code.monte_carlo(&uniform_adversary(), 10, 0xfeed, 2).unwrap();
        let (k2, x2) = code.encode_trial(3, &z, 5, 0xfeed).unwrap();
        assert_eq!(k1, k2);
        assert_eq!(x1, x2);
        // a different private seed may pick a different code
        let (k3, _) = code.encode_trial(3, &z, 6, 0xfeed).unwrap();
        let _ = k3;
    }
}
