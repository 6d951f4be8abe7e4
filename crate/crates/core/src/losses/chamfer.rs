use nalgebra::Vector3;
use rayon::prelude::*;

use super::kdtree::KdTree;
use super::pointcloud::PointCloud;
use crate::error::{Error, Result};

/// Loss value with its gradient with respect to every point of both clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct ChamferValue {
    pub value: f64,
    pub grad_a: Vec<Vector3<f64>>,
    pub grad_b: Vec<Vector3<f64>>,
}

/// For every query point: index of and Euclidean distance to its nearest
/// neighbour in the tree.
pub fn nearest_distances(query: &[Vector3<f64>], tree: &KdTree) -> Vec<(usize, f64)> {
    query
        .par_iter()
        .map(|q| {
            let (j, d2) = tree.nearest(q).expect("non-empty tree");
            (j, d2.sqrt())
        })
        .collect()
}

/// Symmetric Chamfer distance with Euclidean (not squared) distances:
/// `0.5 * (mean_i min_j |a_i - b_j| + mean_j min_i |b_j - a_i|)`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<ChamferValue> {
    chamfer_impl(a, b, None)
}

/// Chamfer distance with each directed term weighted per query point:
/// `0.5 * ((1/N_a) sum_i w_a(i) d_i + (1/N_b) sum_j w_b(j) d_j)`. Weights are
/// treated as constants.
pub fn weighted_chamfer(a: &PointCloud, b: &PointCloud) -> Result<ChamferValue> {
    let wa = a.weights.as_deref().ok_or(Error::MissingWeights)?;
    let wb = b.weights.as_deref().ok_or(Error::MissingWeights)?;
    chamfer_impl(a, b, Some((wa, wb)))
}

fn chamfer_impl(a: &PointCloud, b: &PointCloud, weights: Option<(&[f64], &[f64])>) -> Result<ChamferValue> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    a.validate()?;
    b.validate()?;
    let tree_a = KdTree::build(&a.points);
    let tree_b = KdTree::build(&b.points);
    let mut grad_a = vec![Vector3::zeros(); a.len()];
    let mut grad_b = vec![Vector3::zeros(); b.len()];
    let ab = directed(
        &a.points,
        &b.points,
        &tree_b,
        weights.map(|w| w.0),
        &mut grad_a,
        &mut grad_b,
    );
    let ba = directed(
        &b.points,
        &a.points,
        &tree_a,
        weights.map(|w| w.1),
        &mut grad_b,
        &mut grad_a,
    );
    Ok(ChamferValue {
        value: 0.5 * (ab + ba),
        grad_a,
        grad_b,
    })
}

/// `(1/N) sum_i w_i |q_i - t_nn(i)|`, accumulating half its gradient (the
/// factor 0.5 of the symmetric loss) into the query and matched target points.
fn directed(
    query: &[Vector3<f64>],
    target: &[Vector3<f64>],
    tree: &KdTree,
    weights: Option<&[f64]>,
    grad_query: &mut [Vector3<f64>],
    grad_target: &mut [Vector3<f64>],
) -> f64 {
    let nn = nearest_distances(query, tree);
    let n = query.len() as f64;
    let mut sum = 0.0;
    for (i, &(j, d)) in nn.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        sum += w * d;
        if d > 0.0 && w != 0.0 {
            let g = (query[i] - target[j]) * (0.5 * w / (n * d));
            grad_query[i] += g;
            grad_target[j] -= g;
        }
    }
    sum / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::kdtree::brute_force_nearest;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(p: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(p.iter().map(|v| Vector3::from(*v)).collect())
    }

    fn brute(a: &[Vector3<f64>], b: &[Vector3<f64>], wa: &[f64], wb: &[f64]) -> f64 {
        let dir = |q: &[Vector3<f64>], t: &[Vector3<f64>], w: &[f64]| {
            q.iter()
                .zip(w)
                .map(|(p, w)| w * brute_force_nearest(t, p).unwrap().1.sqrt())
                .sum::<f64>()
                / q.len() as f64
        };
        0.5 * (dir(a, b, wa) + dir(b, a, wb))
    }

    #[test]
    fn closed_form_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b).unwrap().value, 1.0);
        assert_eq!(chamfer(&a, &a).unwrap().value, 0.0);
        let two = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&two, &a).unwrap().value, 0.5);
        let w2 = PointCloud::with_weights(two.points.clone(), vec![1.0, 0.0]).unwrap();
        let w1 = PointCloud::with_weights(a.points.clone(), vec![1.0]).unwrap();
        assert_eq!(weighted_chamfer(&w2, &w1).unwrap().value, 0.0);
    }

    #[test]
    fn errors() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(
            chamfer(&a, &PointCloud::default()),
            Err(Error::EmptyCloud)
        ));
        assert!(matches!(weighted_chamfer(&a, &a), Err(Error::MissingWeights)));
    }

    #[test]
    fn matches_brute_force_and_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mut gen = |n: usize| -> Vec<Vector3<f64>> {
                (0..n)
                    .map(|_| {
                        Vector3::new(
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                        )
                    })
                    .collect()
            };
            let (pa, pb) = (gen(37), gen(81));
            let wa: Vec<f64> = (0..37).map(|i| (i % 5) as f64 / 4.0).collect();
            let wb: Vec<f64> = (0..81).map(|i| (i % 3) as f64 / 2.0).collect();
            let a = PointCloud::with_weights(pa.clone(), wa.clone()).unwrap();
            let b = PointCloud::with_weights(pb.clone(), wb.clone()).unwrap();
            let w = weighted_chamfer(&a, &b).unwrap().value;
            assert!((w - brute(&pa, &pb, &wa, &wb)).abs() < 1e-9);
            let c = chamfer(&a, &b).unwrap().value;
            assert_eq!(c, chamfer(&b, &a).unwrap().value);
            let ones_a = PointCloud::with_weights(pa.clone(), vec![1.0; 37]).unwrap();
            let ones_b = PointCloud::with_weights(pb.clone(), vec![1.0; 81]).unwrap();
            assert!((weighted_chamfer(&ones_a, &ones_b).unwrap().value - c).abs() < 1e-12);
            let zero_a = PointCloud::with_weights(pa, vec![0.0; 37]).unwrap();
            let zero_b = PointCloud::with_weights(pb, vec![0.0; 81]).unwrap();
            assert_eq!(weighted_chamfer(&zero_a, &zero_b).unwrap().value, 0.0);
        }
    }

    #[test]
    fn coincident_points_have_zero_subgradient() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let g = chamfer(&a, &a).unwrap();
        assert!(g.grad_a.iter().chain(&g.grad_b).all(|v| *v == Vector3::zeros()));
    }
}
