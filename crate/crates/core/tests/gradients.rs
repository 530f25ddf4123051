//! Central finite-difference checks of reverse-mode gradients: every
//! preference loss, random graphs over every tape primitive, and the
//! transformer's parameters.

use decaypo::autodiff::{Tape, Var};
use decaypo::losses::{record_pair_loss, score_leaves};
use decaypo::model::TokenSequence;
use decaypo::{
    DecayKind, DecayOrigin, DecaySchedule, LossConfig, LossMethod, ModelConfig, PairScore, PolicyModel, RealArray,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const ATOL: f64 = 1e-8;

/// Compares tape gradients of `build` against central differences in every
/// coordinate of every input. `build` records a scalar and returns it with
/// the input leaves.
fn check_fd<F>(inputs: &[RealArray], build: F) -> Result<(), String>
where
    F: Fn(&mut Tape, &[RealArray]) -> (Var, Vec<Var>),
{
    let mut tape = Tape::new();
    let (out, leaves) = build(&mut tape, inputs);
    let grads = tape.gradients(out).map_err(|e| e.to_string())?;
    let eval = |xs: &[RealArray]| {
        let mut t = Tape::new();
        let (o, _) = build(&mut t, xs);
        t.scalar(o)
    };
    for (k, leaf) in leaves.iter().enumerate() {
        let g = grads.wrt(*leaf);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].values_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].values_mut()[i] -= STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let an = g.values()[i];
            if (an - fd).abs() > RTOL * an.abs().max(fd.abs()) + ATOL {
                return Err(format!("input {k}[{i}]: tape {an:e} vs finite difference {fd:e}"));
            }
        }
    }
    Ok(())
}

fn random_logps(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-6.0..-0.05)).collect()
}

fn random_score(rng: &mut ChaCha8Rng) -> PairScore {
    let tc = rng.random_range(1..12);
    let tl = rng.random_range(1..12);
    let chosen = random_logps(rng, tc);
    let rejected = random_logps(rng, tl);
    let cref = random_logps(rng, tc);
    let rref = random_logps(rng, tl);
    PairScore::new(chosen, rejected, rng.random_range(0..20)).with_reference(cref, rref)
}

fn random_config(rng: &mut ChaCha8Rng, method: LossMethod) -> LossConfig {
    let kinds = [
        DecayKind::Uniform,
        DecayKind::Exponential,
        DecayKind::Head,
        DecayKind::Linear,
        DecayKind::PowerLaw,
    ];
    let kind = kinds[rng.random_range(0..kinds.len())];
    let origin = if rng.random_bool(0.5) { DecayOrigin::PromptStart } else { DecayOrigin::AnswerStart };
    LossConfig {
        method,
        beta: rng.random_range(0.05..2.0),
        schedule: DecaySchedule::new(kind, rng.random_range(0.5..1.0), origin),
        tau: rng.random_range(0.05..1.0),
        lambda_w: rng.random_range(0.5..2.0),
        lambda_l: rng.random_range(0.5..2.0),
        lambda_orpo: rng.random_range(0.1..2.0),
        target_margin: rng.random_range(0.0..1.0),
        sampo_seed: rng.random(),
    }
}

fn loss_fd(method: LossMethod, instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ method as u64);
    for n in 0..instances {
        let score = random_score(&mut rng);
        let cfg = random_config(&mut rng, method);
        let z_ref = rng.random_range(0.0..0.5);
        let id = rng.random_range(0..1000u64);
        let inputs = [
            RealArray::vector(score.chosen_logps.clone()),
            RealArray::vector(score.rejected_logps.clone()),
        ];
        let result = check_fd(&inputs, |tape, xs| {
            let mut s = score.clone();
            s.chosen_logps = xs[0].values().to_vec();
            s.rejected_logps = xs[1].values().to_vec();
            let vars = score_leaves(tape, &s);
            let rec = record_pair_loss(tape, &vars, &cfg, id, z_ref).unwrap();
            (rec.loss, vec![vars.chosen, vars.rejected])
        });
        if let Err(e) = result {
            panic!("{method} instance {n} ({cfg:?}): {e}");
        }
    }
}

#[test]
fn d2po_gradients() {
    loss_fd(LossMethod::D2po, 150);
}

#[test]
fn reference_free_gradients() {
    loss_fd(LossMethod::D2poRefFree, 150);
}

#[test]
fn simpo_gradients() {
    loss_fd(LossMethod::SimPo, 150);
}

#[test]
fn ipo_gradients() {
    loss_fd(LossMethod::Ipo, 150);
}

#[test]
fn kto_gradients() {
    loss_fd(LossMethod::Kto, 150);
}

#[test]
fn orpo_gradients() {
    loss_fd(LossMethod::Orpo, 150);
}

#[test]
fn sampo_gradients() {
    loss_fd(LossMethod::SamPo, 150);
}

fn random_array(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> RealArray {
    let n = shape.iter().product();
    RealArray::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Attention-like graph touching every primitive once.
fn composed(tape: &mut Tape, xs: &[RealArray], idx: &[usize], targets: &[usize], weights: &[f64]) -> (Var, Vec<Var>) {
    let table = tape.leaf(xs[0].clone());
    let w = tape.leaf(xs[1].clone());
    let x = tape.leaf(xs[2].clone());
    let n = idx.len();
    let h = tape.gather_rows(table, idx).unwrap();
    let a = tape.matmul(h, w);
    let scores = tape.matmul_t(a, h);
    let attn = tape.causal_softmax(scores);
    let ctx = tape.matmul(attn, h);
    let pre = tape.add(ctx, x);
    let act = tape.relu(pre);
    let gate = tape.sigmoid(x);
    let mixed = tape.mul(act, gate);
    let diff = tape.sub(mixed, h);
    let tail = tape.slice_rows(diff, 1, n);
    let scaled = tape.scale(tail, 1.3);
    let logits = tape.offset(scaled, 0.2);
    let lp = tape.log_prob_gather(logits, targets).unwrap();
    let shifted = tape.offset(lp, -0.1);
    let l1 = tape.log1mexp(shifted);
    let s1 = tape.sum(l1);
    let ls = tape.logsigmoid(lp);
    let s2 = tape.weighted_sum(ls, weights);
    let sq = tape.square(lp);
    let s3 = tape.sum(sq);
    let t = tape.add(s1, s2);
    (tape.add(t, s3), vec![table, w, x])
}

#[test]
fn composed_graphs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 100 {
        let (v, d) = (rng.random_range(2..6), rng.random_range(2..5));
        let n = rng.random_range(2..6);
        let inputs = [
            random_array(&mut rng, vec![v, d], 1.0),
            random_array(&mut rng, vec![d, d], 1.0),
            random_array(&mut rng, vec![n, d], 1.0),
        ];
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
        let targets: Vec<usize> = (1..n).map(|_| rng.random_range(0..d)).collect();
        let weights: Vec<f64> = (1..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        // skip draws that put a relu input next to its kink
        if relu_inputs(&inputs, &idx).iter().any(|x| x.abs() < 1e-3) {
            continue;
        }
        check_fd(&inputs, |t, xs| composed(t, xs, &idx, &targets, &weights)).unwrap_or_else(|e| panic!("graph {checked}: {e}"));
        checked += 1;
    }
}

/// Values entering the relu in [`composed`].
fn relu_inputs(xs: &[RealArray], idx: &[usize]) -> Vec<f64> {
    let mut tape = Tape::new();
    let table = tape.leaf(xs[0].clone());
    let w = tape.leaf(xs[1].clone());
    let x = tape.leaf(xs[2].clone());
    let h = tape.gather_rows(table, idx).unwrap();
    let a = tape.matmul(h, w);
    let s = tape.matmul_t(a, h);
    let p = tape.causal_softmax(s);
    let c = tape.matmul(p, h);
    let pre = tape.add(c, x);
    tape.value(pre).values().to_vec()
}

#[test]
fn model_parameter_gradients() {
    let cfg = ModelConfig {
        d_model: 6,
        context: 12,
        blocks: 2,
        mlp_hidden: 7,
        init_seed: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = PolicyModel::new(cfg).unwrap();
    for p in model.params_mut() {
        for v in p.values_mut() {
            *v += rng.random_range(-0.4..0.4);
        }
    }
    let chosen = TokenSequence::from_bytes(b"ab*2=", b"abab");
    let rejected = TokenSequence::from_bytes(b"ab*2=", b"ab");
    let loss_cfg = LossConfig {
        beta: 0.7,
        schedule: DecaySchedule::exponential(0.9, DecayOrigin::PromptStart),
        ..LossConfig::default()
    };
    let cref = random_logps(&mut rng, chosen.response_len());
    let rref = random_logps(&mut rng, rejected.response_len());

    let mut tape = Tape::new();
    let leaves = model.param_leaves(&mut tape);
    let c = model.record_token_logprobs(&mut tape, &leaves, &chosen).unwrap();
    let r = model.record_token_logprobs(&mut tape, &leaves, &rejected).unwrap();
    let vars = decaypo::losses::PairVars {
        chosen: c,
        rejected: r,
        chosen_ref: Some(&cref),
        rejected_ref: Some(&rref),
        prompt_len: chosen.prompt_len(),
    };
    let rec = record_pair_loss(&mut tape, &vars, &loss_cfg, 0, 0.0).unwrap();
    let grads = model.param_grads(&tape.gradients(rec.loss).unwrap(), &leaves);

    let loss_at = |m: &PolicyModel| {
        let s = PairScore::new(
            m.token_logprobs(&chosen).unwrap(),
            m.token_logprobs(&rejected).unwrap(),
            chosen.prompt_len(),
        )
        .with_reference(cref.clone(), rref.clone());
        decaypo::losses::d2po_loss(&s, &loss_cfg).unwrap()
    };
    assert!((loss_at(&model) - tape.scalar(rec.loss)).abs() < 1e-12);
    for (k, g) in grads.iter().enumerate() {
        for _ in 0..6 {
            let i = rng.random_range(0..g.len());
            let mut plus = model.clone();
            plus.params_mut()[k].values_mut()[i] += STEP;
            let mut minus = model.clone();
            minus.params_mut()[k].values_mut()[i] -= STEP;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * STEP);
            let an = g.values()[i];
            assert!(
                (an - fd).abs() <= RTOL * an.abs().max(fd.abs()) + ATOL,
                "{}[{i}]: tape {an:e} vs finite difference {fd:e}",
                model.param_names()[k]
            );
        }
    }
}
