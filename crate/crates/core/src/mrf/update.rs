use super::{MarkovRandomField, MessageId, MessageView};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Normalizes a non-negative vector so that it sums to one.
pub fn l1_normalize<T: Real>(v: &[T]) -> Result<Vec<T>> {
    let mut out = v.to_vec();
    l1_normalize_in_place(&mut out)?;
    Ok(out)
}

pub fn l1_normalize_in_place<T: Real>(v: &mut [T]) -> Result<()> {
    let sum: T = v.iter().copied().sum();
    if !(sum > T::zero()) || !sum.is_finite() {
        return Err(Error::ZeroVector);
    }
    let inv = T::one() / sum;
    for x in v.iter_mut() {
        *x = *x * inv;
    }
    Ok(())
}

/// Euclidean distance between two equal-length vectors.
#[inline]
pub fn l2_distance<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, d| acc + d)
        .sqrt()
}

/// Reusable buffers for message computation.
#[derive(Debug, Default, Clone)]
pub struct MessageScratch<T> {
    product: Vec<T>,
}

impl<T> MessageScratch<T> {
    pub fn new() -> Self {
        Self { product: Vec::new() }
    }
}

/// Writes the normalized update of message `id` into `out`, reading each
/// incoming message exactly once.
pub fn compute_message_into<T: Real, V: MessageView<T> + ?Sized>(
    mrf: &MarkovRandomField<T>,
    view: &V,
    id: MessageId,
    scratch: &mut MessageScratch<T>,
    out: &mut Vec<T>,
) -> Result<()> {
    let (from, to) = mrf.endpoints(id);
    let d_from = mrf.domain(from);
    let d_to = mrf.domain(to);

    let product = &mut scratch.product;
    product.clear();
    product.extend_from_slice(mrf.node_factor(from));
    for a in mrf.neighbors(from) {
        if a.outgoing == id {
            continue;
        }
        view.with_message(a.incoming, |incoming| {
            for (p, &m) in product.iter_mut().zip(incoming) {
                *p = *p * m;
            }
        });
    }

    out.clear();
    out.resize(d_to, T::zero());
    let table = mrf.edge_factor(id.edge());
    let forward = id.index() & 1 == 0;
    for (x_from, &p) in product.iter().enumerate() {
        if p == T::zero() {
            continue;
        }
        if forward {
            let row = &table[x_from * d_to..(x_from + 1) * d_to];
            for (o, &psi) in out.iter_mut().zip(row) {
                *o = *o + p * psi;
            }
        } else {
            for (x_to, o) in out.iter_mut().enumerate() {
                *o = *o + p * table[x_to * d_from + x_from];
            }
        }
    }
    l1_normalize_in_place(out)
}

/// The value message `id` would take if updated now; `view` is not modified.
pub fn compute_message<T: Real, V: MessageView<T> + ?Sized>(
    mrf: &MarkovRandomField<T>,
    view: &V,
    id: MessageId,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    compute_message_into(mrf, view, id, &mut MessageScratch::new(), &mut out)?;
    Ok(out)
}

/// L2 distance between a candidate value and the current value of `id`.
pub fn message_residual<T: Real, V: MessageView<T> + ?Sized>(
    view: &V,
    candidate: &[T],
    id: MessageId,
) -> T {
    view.with_message(id, |current| l2_distance(candidate, current))
}

/// Largest residual among the messages entering `node`; 0 when isolated.
pub fn node_residual<T>(mrf: &MarkovRandomField<T>, residuals: &[f64], node: usize) -> f64 {
    mrf.neighbors(node)
        .iter()
        .map(|a| residuals[a.incoming.index()])
        .fold(0.0, f64::max)
}

/// Normalized product of the node factor and all incoming messages.
pub fn estimate_marginal<T: Real, V: MessageView<T> + ?Sized>(
    mrf: &MarkovRandomField<T>,
    view: &V,
    node: usize,
) -> Result<Vec<T>> {
    let mut belief = mrf.node_factor(node).to_vec();
    for a in mrf.neighbors(node) {
        view.with_message(a.incoming, |m| {
            for (b, &v) in belief.iter_mut().zip(m) {
                *b = *b * v;
            }
        });
    }
    l1_normalize_in_place(&mut belief)?;
    Ok(belief)
}

pub fn estimate_marginals<T: Real, V: MessageView<T> + ?Sized>(
    mrf: &MarkovRandomField<T>,
    view: &V,
) -> Result<Vec<Vec<T>>> {
    (0..mrf.node_count())
        .map(|i| estimate_marginal(mrf, view, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::{brute_force_marginals, Messages};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(l1_normalize(&[2.0, 2.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(l1_normalize(&[0.1, 0.9]).unwrap(), vec![0.1, 0.9]);
        assert_eq!(l1_normalize(&[1.0, 3.0]).unwrap(), vec![0.25, 0.75]);
        assert!(matches!(l1_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(l1_normalize::<f64>(&[]), Err(Error::ZeroVector)));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_scale_invariant(
            v in prop::collection::vec(0.0f64..10.0, 1..8),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(v.iter().sum::<f64>() > 1e-9);
            let a = l1_normalize(&v).unwrap();
            let b = l1_normalize(&a).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let s = l1_normalize(&scaled).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..v.len() {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
                prop_assert!((a[k] - s[k]).abs() < 1e-12);
            }
        }
    }

    fn root_child() -> MarkovRandomField<f64> {
        MarkovRandomField::new(
            vec![2, 2],
            vec![vec![0.1, 0.9], vec![0.5, 0.5]],
            vec![(0, 1)],
            vec![vec![1.0, 0.0, 0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn root_message_reproduces_root_factor() {
        let m = root_child();
        let state = Messages::uniform(&m);
        let out = compute_message(&m, &state, MessageId(0)).unwrap();
        assert_abs_diff_eq!(out[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn all_ones_factor_gives_uniform() {
        let m = MarkovRandomField::new(
            vec![2, 2, 2],
            vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.3, 0.7]],
            vec![(0, 1), (2, 0)],
            vec![vec![1.0; 4], vec![1.0, 2.0, 3.0, 4.0]],
        )
        .unwrap();
        let mut state = Messages::uniform(&m);
        state.set(MessageId(2), &[0.8, 0.2]);
        let out = compute_message(&m, &state, MessageId(0)).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    /// Three-node chain k - i - j with one informative incoming message.
    fn three_chain() -> MarkovRandomField<f64> {
        MarkovRandomField::new(
            vec![2, 2, 2],
            vec![vec![0.3, 0.7], vec![0.6, 0.4], vec![1.0, 1.0]],
            // (k, i) then (i, j)
            vec![(0, 1), (1, 2)],
            vec![vec![1.0, 1.0, 1.0, 1.0], vec![2.0, 1.0, 1.0, 2.0]],
        )
        .unwrap()
    }

    #[test]
    fn derived_three_node_message() {
        let m = three_chain();
        let mut state = Messages::uniform(&m);
        // mu_{k->i} = (0.3, 0.7)
        state.set(MessageId(0), &[0.3, 0.7]);
        let out = compute_message(&m, &state, MessageId(2)).unwrap();
        // unnormalized: 0.18*2 + 0.28*1 = 0.64, 0.18*1 + 0.28*2 = 0.74
        assert_abs_diff_eq!(out[0], 0.64 / 1.38, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.74 / 1.38, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0], 0.46377, epsilon = 1e-5);

        // With an all-ones edge k-i, the k-factor (0.3, 0.7) only reaches i
        // through that message if it carries psi_k; the brute-force oracle
        // on the model where psi_k enters via an identity edge agrees.
        let oracle_model = MarkovRandomField::new(
            vec![2, 2, 2],
            vec![vec![0.3, 0.7], vec![0.6, 0.4], vec![1.0, 1.0]],
            vec![(0, 1), (1, 2)],
            vec![vec![1.0, 0.0, 0.0, 1.0], vec![2.0, 1.0, 1.0, 2.0]],
        )
        .unwrap();
        let exact = brute_force_marginals(&oracle_model).unwrap();
        assert_abs_diff_eq!(exact[2][0], 0.64 / 1.38, epsilon = 1e-12);
    }

    #[test]
    fn compute_message_does_not_mutate() {
        let m = three_chain();
        let state = Messages::uniform(&m);
        let before = state.clone();
        let _ = compute_message(&m, &state, MessageId(2)).unwrap();
        assert_eq!(state, before);
    }

    #[test]
    fn residual_examples() {
        let m = root_child();
        let state = Messages::uniform(&m);
        assert_eq!(message_residual(&state, &[0.5, 0.5], MessageId(0)), 0.0);
        let r = message_residual(&state, &[0.1, 0.9], MessageId(0));
        assert_abs_diff_eq!(r, 0.32f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r, 0.565685, epsilon = 1e-6);
        // child -> root carries no information initially
        let back = compute_message(&m, &state, MessageId(1)).unwrap();
        assert_eq!(message_residual(&state, &back, MessageId(1)), 0.0);
    }

    #[test]
    fn node_residual_examples() {
        // star: center 0 with three leaves
        let m = MarkovRandomField::<f64>::new(
            vec![1, 1, 1, 1, 1],
            vec![vec![1.0]; 5],
            vec![(1, 0), (2, 0), (3, 0)],
            vec![vec![1.0]; 3],
        )
        .unwrap();
        let mut res = vec![0.0; m.message_count()];
        assert_eq!(node_residual(&m, &res, 0), 0.0);
        res[0] = 0.2;
        res[2] = 0.5;
        res[4] = 0.1;
        assert_eq!(node_residual(&m, &res, 0), 0.5);
        res[1] = 0.3;
        assert_eq!(node_residual(&m, &res, 1), 0.3);
        assert_eq!(node_residual(&m, &res, 4), 0.0);
    }

    #[test]
    fn marginal_examples() {
        let iso = MarkovRandomField::new(vec![2], vec![vec![0.3, 0.7]], vec![], vec![]).unwrap();
        let s = Messages::uniform(&iso);
        assert_eq!(estimate_marginal(&iso, &s, 0).unwrap(), vec![0.3, 0.7]);

        let chain = root_child();
        let mut s = Messages::uniform(&chain);
        s.set(MessageId(0), &[0.1, 0.9]);
        let b = estimate_marginal(&chain, &s, 1).unwrap();
        assert_abs_diff_eq!(b[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.9, epsilon = 1e-15);
        let exact = brute_force_marginals(&chain).unwrap();
        assert_abs_diff_eq!(exact[1][1], b[1], epsilon = 1e-15);

        let uniform = MarkovRandomField::new(
            vec![3, 3],
            vec![vec![1.0; 3], vec![1.0; 3]],
            vec![(0, 1)],
            vec![vec![1.0; 9]],
        )
        .unwrap();
        let s = Messages::uniform(&uniform);
        let b = estimate_marginal(&uniform, &s, 0).unwrap();
        for v in b {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn contradictory_model_raises_zero_vector() {
        // node 1 forbids state 0, identity edge forces 0 from node 0
        let m = MarkovRandomField::new(
            vec![2, 2],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![(0, 1)],
            vec![vec![1.0, 0.0, 0.0, 1.0]],
        )
        .unwrap();
        let mut s = Messages::uniform(&m);
        let msg = compute_message(&m, &s, MessageId(0)).unwrap();
        s.set(MessageId(0), &msg);
        assert!(matches!(estimate_marginal(&m, &s, 1), Err(Error::ZeroVector)));
    }

    #[test]
    fn works_in_single_precision() {
        let m = MarkovRandomField::<f32>::new(
            vec![2, 2],
            vec![vec![0.1, 0.9], vec![0.5, 0.5]],
            vec![(0, 1)],
            vec![vec![1.0, 0.0, 0.0, 1.0]],
        )
        .unwrap();
        let s = Messages::uniform(&m);
        let out = compute_message(&m, &s, MessageId(0)).unwrap();
        assert!((out[1] - 0.9).abs() < 1e-6);
    }
}
