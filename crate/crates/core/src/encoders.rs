//! Word embeddings and GRU / bidirectional-GRU sequence encoders.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Half-width of the uniform initialisation range for all weights.
pub const INIT_RANGE: f64 = 0.05;

/// `[D x |V|]` trainable word embeddings; column `pad` is pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub dim: usize,
    pub vocab_size: usize,
    pub pad: usize,
}

impl EmbeddingTable {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        vocab_size: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = Tensor::uniform(&[dim, vocab_size], -INIT_RANGE, INIT_RANGE, rng);
        for r in 0..dim {
            w.data_mut()[r * vocab_size + pad] = 0.0;
        }
        let id = params.insert(name, w);
        EmbeddingTable {
            id,
            dim,
            vocab_size,
            pad,
        }
    }

    /// Mask selecting every entry except the padding column.
    pub fn non_pad_mask(&self) -> Vec<bool> {
        (0..self.dim * self.vocab_size)
            .map(|i| i % self.vocab_size != self.pad)
            .collect()
    }
}

/// Gathers the embedding columns for `token_ids` into a `[D x L]` matrix.
pub fn embed_lookup(tape: &mut Tape, params: &ParamSet, table: &EmbeddingTable, token_ids: &[usize]) -> Result<Var> {
    tape.embed(params, table.id, token_ids, Some(table.pad))
}

/// Weights of one GRU direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |suffix: &str, shape: &[usize], rng: &mut R| {
            params.insert(
                format!("{prefix}.{suffix}"),
                Tensor::uniform(shape, -INIT_RANGE, INIT_RANGE, rng),
            )
        };
        let w_z = w("w_z", &[hidden, input], rng);
        let u_z = w("u_z", &[hidden, hidden], rng);
        let w_r = w("w_r", &[hidden, input], rng);
        let u_r = w("u_r", &[hidden, hidden], rng);
        let w_h = w("w_h", &[hidden, input], rng);
        let u_h = w("u_h", &[hidden, hidden], rng);
        let mut b = |suffix: &str| params.insert(format!("{prefix}.{suffix}"), Tensor::zeros(&[hidden]));
        let b_z = b("b_z");
        let b_r = b("b_r");
        let b_h = b("b_h");
        GruParams {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            input,
            hidden,
        }
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h,
        ]
    }

    /// Scalar count for one direction: `3 (d*D_in + d*d + d)`.
    pub fn num_scalars(&self) -> usize {
        3 * (self.hidden * self.input + self.hidden * self.hidden + self.hidden)
    }

    /// Places the weights on `tape` for the duration of one example.
    pub fn load(&self, tape: &mut Tape, params: &ParamSet) -> GruVars {
        GruVars {
            w_z: tape.param(params, self.w_z),
            u_z: tape.param(params, self.u_z),
            b_z: tape.param(params, self.b_z),
            w_r: tape.param(params, self.w_r),
            u_r: tape.param(params, self.u_r),
            b_r: tape.param(params, self.b_r),
            w_h: tape.param(params, self.w_h),
            u_h: tape.param(params, self.u_h),
            b_h: tape.param(params, self.b_h),
            hidden: self.hidden,
        }
    }
}

/// GRU weights resident on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    w_z: Var,
    u_z: Var,
    b_z: Var,
    w_r: Var,
    u_r: Var,
    b_r: Var,
    w_h: Var,
    u_h: Var,
    b_h: Var,
    pub hidden: usize,
}

/// One GRU update with the reset gate applied before the candidate
/// projection:
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
pub fn gru_step(tape: &mut Tape, p: &GruVars, x: Var, h: Var) -> Result<Var> {
    let xz = tape.matvec(p.w_z, x)?;
    let xz = tape.add(xz, p.b_z)?;
    let xr = tape.matvec(p.w_r, x)?;
    let xr = tape.add(xr, p.b_r)?;
    let xh = tape.matvec(p.w_h, x)?;
    let xh = tape.add(xh, p.b_h)?;
    gru_step_projected(tape, p, xz, xr, xh, h)
}

/// GRU update given precomputed input projections (bias included).
fn gru_step_projected(tape: &mut Tape, p: &GruVars, xz: Var, xr: Var, xh: Var, h: Var) -> Result<Var> {
    if tape.shape(h) != [p.hidden] {
        return Err(Error::dim("gru_step", tape.shape(h), &[p.hidden]));
    }
    let uz = tape.matvec(p.u_z, h)?;
    let z = tape.add(xz, uz)?;
    let z = tape.sigmoid(z)?;
    let ur = tape.matvec(p.u_r, h)?;
    let r = tape.add(xr, ur)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let uh = tape.matvec(p.u_h, rh)?;
    let cand = tape.add(xh, uh)?;
    let cand = tape.tanh(cand)?;
    // h + z * (cand - h) == (1 - z) * h + z * cand
    let delta = tape.sub(cand, h)?;
    let delta = tape.mul(z, delta)?;
    tape.add(h, delta)
}

/// Runs a GRU over the columns of `xs: [D_in x N]` in the order given by
/// `steps`, starting from the zero state. Returns the state after each
/// step, in visiting order.
pub fn gru_scan(tape: &mut Tape, p: &GruVars, xs: Var, steps: impl IntoIterator<Item = usize>) -> Result<Vec<Var>> {
    let pz = tape.matmul(p.w_z, xs)?;
    let pz = tape.add_col_bias(pz, p.b_z)?;
    let pr = tape.matmul(p.w_r, xs)?;
    let pr = tape.add_col_bias(pr, p.b_r)?;
    let ph = tape.matmul(p.w_h, xs)?;
    let ph = tape.add_col_bias(ph, p.b_h)?;
    let mut h = tape.zeros(&[p.hidden]);
    let mut states = Vec::new();
    for t in steps {
        let xz = tape.column(pz, t)?;
        let xr = tape.column(pr, t)?;
        let xh = tape.column(ph, t)?;
        h = gru_step_projected(tape, p, xz, xr, xh, h)?;
        states.push(h);
    }
    Ok(states)
}

/// Forward and backward GRU weights for one sequence type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiGruParams {
    pub forward: GruParams,
    pub backward: GruParams,
}

impl BiGruParams {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        BiGruParams {
            forward: GruParams::register(params, &format!("{prefix}.fwd"), input, hidden, rng),
            backward: GruParams::register(params, &format!("{prefix}.bwd"), input, hidden, rng),
        }
    }

    pub fn load(&self, tape: &mut Tape, params: &ParamSet) -> BiGruVars {
        BiGruVars {
            forward: self.forward.load(tape, params),
            backward: self.backward.load(tape, params),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BiGruVars {
    pub forward: GruVars,
    pub backward: GruVars,
}

/// Per-position biGRU outputs as the rows of an `[N x 2d]` matrix.
/// Rows at or beyond `len` are zero.
#[derive(Debug, Clone, Copy)]
pub struct BiGruEncoding {
    pub rows: Var,
    pub len: usize,
    pub positions: usize,
}

fn check_valid_len(tape: &Tape, emb: Var, valid_len: usize, op: &'static str) -> Result<usize> {
    let n = match tape.shape(emb) {
        &[_, n] => n,
        other => return Err(Error::dim(op, other, &[0, 0])),
    };
    if valid_len == 0 {
        return Err(Error::degenerate(op, "empty sequence"));
    }
    if valid_len > n {
        return Err(Error::dim(op, &[n], &[valid_len]));
    }
    Ok(n)
}

/// Encodes `emb: [D x N]` whose first `valid_len` columns are real tokens.
///
/// Position `i < valid_len` holds `[forward state after tokens 0..=i ;
/// backward state after tokens valid_len-1 down to i]`.
pub fn encode_text(tape: &mut Tape, enc: &BiGruVars, emb: Var, valid_len: usize) -> Result<BiGruEncoding> {
    let n = check_valid_len(tape, emb, valid_len, "encode_text")?;
    let fwd = gru_scan(tape, &enc.forward, emb, 0..valid_len)?;
    let mut bwd = gru_scan(tape, &enc.backward, emb, (0..valid_len).rev())?;
    bwd.reverse();
    let mut rows = Vec::with_capacity(n);
    for (f, b) in fwd.iter().zip(&bwd) {
        rows.push(tape.concat(&[*f, *b])?);
    }
    let width = enc.forward.hidden + enc.backward.hidden;
    for _ in valid_len..n {
        rows.push(tape.zeros(&[width]));
    }
    let rows = tape.stack_rows(&rows)?;
    Ok(BiGruEncoding {
        rows,
        len: valid_len,
        positions: n,
    })
}

/// Single-vector question encoding: the forward GRU's final state
/// concatenated with the backward GRU's state after it has read the whole
/// question (i.e. its output aligned with the first token).
pub fn encode_question(tape: &mut Tape, enc: &BiGruVars, emb: Var, valid_len: usize) -> Result<Var> {
    check_valid_len(tape, emb, valid_len, "encode_question")?;
    let fwd = gru_scan(tape, &enc.forward, emb, 0..valid_len)?;
    let bwd = gru_scan(tape, &enc.backward, emb, (0..valid_len).rev())?;
    let f = *fwd.last().expect("valid_len >= 1");
    let b = *bwd.last().expect("valid_len >= 1");
    tape.concat(&[f, b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(input: usize, hidden: usize, seed: u64) -> (ParamSet, BiGruParams, EmbeddingTable) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let table = EmbeddingTable::register(&mut params, "emb", input, 6, 0, &mut rng);
        let enc = BiGruParams::register(&mut params, "enc", input, hidden, &mut rng);
        // Larger weights than the default init so states are not all ~0.
        for id in params.ids().collect::<Vec<_>>() {
            for x in params.get_mut(id).data_mut() {
                *x *= 20.0;
            }
        }
        (params, enc, table)
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GruParams::register(&mut params, "g", 3, 4, &mut rng);
        for id in p.ids() {
            params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new();
        let vars = p.load(&mut tape, &params);
        let x = tape.zeros(&[3]);
        let h = tape.zeros(&[4]);
        let out = gru_step(&mut tape, &vars, x, h).unwrap();
        assert_eq!(tape.value(out), &[0.0; 4]);
    }

    #[test]
    fn saturated_update_gate_takes_candidate() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GruParams::register(&mut params, "g", 3, 4, &mut rng);
        params.get_mut(p.b_z).data_mut().iter_mut().for_each(|x| *x = 1e3);
        let mut tape = Tape::new();
        let vars = p.load(&mut tape, &params);
        let x = tape.leaf(&Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap());
        let h = tape.leaf(&Tensor::vector(vec![0.3, -0.2, 0.9, 0.0]).unwrap());
        let out = gru_step(&mut tape, &vars, x, h).unwrap();
        let out = tape.value(out).to_vec();

        // candidate computed independently
        let get = |id| params.get(id).data().to_vec();
        let (wh, uh, ur, wr) = (get(p.w_h), get(p.u_h), get(p.u_r), get(p.w_r));
        let xv = [0.5, -1.0, 2.0];
        let hv = [0.3, -0.2, 0.9, 0.0];
        let r: Vec<f64> = (0..4)
            .map(|i| {
                let a: f64 = (0..3).map(|j| wr[i * 3 + j] * xv[j]).sum::<f64>()
                    + (0..4).map(|j| ur[i * 4 + j] * hv[j]).sum::<f64>();
                1.0 / (1.0 + (-a).exp())
            })
            .collect();
        for i in 0..4 {
            let a: f64 = (0..3).map(|j| wh[i * 3 + j] * xv[j]).sum::<f64>()
                + (0..4).map(|j| uh[i * 4 + j] * r[j] * hv[j]).sum::<f64>();
            assert!((out[i] - a.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_text_has_width_two_d() {
        let (params, enc, table) = setup(3, 4, 2);
        let mut tape = Tape::new();
        let vars = enc.load(&mut tape, &params);
        let e = embed_lookup(&mut tape, &params, &table, &[3]).unwrap();
        let out = encode_text(&mut tape, &vars, e, 1).unwrap();
        assert_eq!(tape.shape(out.rows), &[1, 8]);
        let q = encode_question(&mut tape, &vars, e, 1).unwrap();
        // one step each over the same token: identical to the text row
        assert_eq!(tape.value(q), tape.value(out.rows));
    }

    #[test]
    fn palindrome_with_shared_weights_mirrors() {
        let (params, enc, table) = setup(3, 4, 3);
        let shared = BiGruParams {
            forward: enc.forward.clone(),
            backward: enc.forward.clone(),
        };
        let mut tape = Tape::new();
        let vars = shared.load(&mut tape, &params);
        let e = embed_lookup(&mut tape, &params, &table, &[2, 5, 2]).unwrap();
        let out = encode_text(&mut tape, &vars, e, 3).unwrap();
        let rows = tape.value(out.rows);
        for i in 0..3 {
            let fwd = &rows[i * 8..i * 8 + 4];
            let mirror = 2 - i;
            let bwd = &rows[mirror * 8 + 4..mirror * 8 + 8];
            for (a, b) in fwd.iter().zip(bwd) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn padding_is_invisible() {
        let (params, enc, table) = setup(3, 4, 4);
        let mut tape = Tape::new();
        let vars = enc.load(&mut tape, &params);
        let short = embed_lookup(&mut tape, &params, &table, &[1, 4, 3]).unwrap();
        let padded = embed_lookup(&mut tape, &params, &table, &[1, 4, 3, 0, 0]).unwrap();
        let a = encode_text(&mut tape, &vars, short, 3).unwrap();
        let b = encode_text(&mut tape, &vars, padded, 3).unwrap();
        let (av, bv) = (tape.value(a.rows).to_vec(), tape.value(b.rows).to_vec());
        assert_eq!(&bv[..24], &av[..]);
        assert!(bv[24..].iter().all(|&x| x == 0.0));
        let qa = encode_question(&mut tape, &vars, short, 3).unwrap();
        let qb = encode_question(&mut tape, &vars, padded, 3).unwrap();
        assert_eq!(tape.value(qa), tape.value(qb));
    }

    #[test]
    fn empty_sequence_is_degenerate() {
        let (params, enc, table) = setup(3, 4, 5);
        let mut tape = Tape::new();
        let vars = enc.load(&mut tape, &params);
        let e = embed_lookup(&mut tape, &params, &table, &[1]).unwrap();
        assert!(matches!(
            encode_question(&mut tape, &vars, e, 0),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn states_stay_inside_unit_interval() {
        let (params, enc, table) = setup(3, 4, 6);
        let mut tape = Tape::new();
        let vars = enc.load(&mut tape, &params);
        let e = embed_lookup(&mut tape, &params, &table, &[1, 2, 3, 4, 5, 1, 2]).unwrap();
        let out = encode_text(&mut tape, &vars, e, 7).unwrap();
        assert!(tape.value(out.rows).iter().all(|x| x.abs() < 1.0));
    }
}
