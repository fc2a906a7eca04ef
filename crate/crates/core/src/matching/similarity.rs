use thiserror::Error;

use crate::autodiff::Matrix;
use crate::graph::RoadGraph;

#[derive(Debug, Error, PartialEq)]
#[error("embedding widths differ: {left} vs {right}")]
pub struct WidthMismatch {
    pub left: usize,
    pub right: usize,
}

/// Raw inner products `H_s H_t^T`.
pub fn feature_similarity(h_s: &Matrix, h_t: &Matrix) -> Result<Matrix, WidthMismatch> {
    if h_s.cols() != h_t.cols() {
        return Err(WidthMismatch {
            left: h_s.cols(),
            right: h_t.cols(),
        });
    }
    Ok(h_s.matmul(&h_t.transpose()).expect("widths checked"))
}

/// Euclidean distances between every source row and every target row of two
/// point sets of equal width.
pub fn pairwise_distance(x_s: &Matrix, x_t: &Matrix) -> Matrix {
    assert_eq!(x_s.cols(), x_t.cols(), "point dimensions differ");
    Matrix::from_fn(x_s.rows(), x_t.rows(), |u, v| {
        x_s.row(u)
            .iter()
            .zip(x_t.row(v))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    })
}

/// `T_uv = Deg_s(u) - Deg_t(v)` from one-hop normalized degrees.
pub fn struct_diff(graph_s: &RoadGraph, graph_t: &RoadGraph) -> Matrix {
    let ds = graph_s.normalized_degrees();
    let dt = graph_t.normalized_degrees();
    Matrix::from_fn(ds.len(), dt.len(), |u, v| ds[u] - dt[v])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PseudoCoordinates;
    use crate::graph::RoadGraphBuilder;

    #[test]
    fn hand_inner_products() {
        let hs = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        let ht = Matrix::from_rows(&[[1.0, 1.0], [1.0, 0.0]]);
        assert_eq!(feature_similarity(&hs, &ht).unwrap(), Matrix::from_rows(&[[1.0, 1.0], [2.0, 0.0]]));
        assert_eq!(feature_similarity(&hs, &Matrix::zeros(3, 2)).unwrap(), Matrix::zeros(2, 3));
        assert_eq!(feature_similarity(&Matrix::identity(3), &Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert!(feature_similarity(&hs, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn distances() {
        let a = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]);
        let b = Matrix::from_rows(&[[0.3, 0.4], [1.0, 1.0]]);
        let d = pairwise_distance(&a, &b);
        assert!((d.get(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(d.get(0, 1), 2f64.sqrt());
        assert_eq!(d.get(1, 1), 0.0);
        let same = pairwise_distance(&a, &a);
        assert_eq!((same.get(0, 0), same.get(1, 1)), (0.0, 0.0));
    }

    fn k4_plus_isolated() -> (RoadGraph, RoadGraph) {
        let mut b = RoadGraphBuilder::new();
        b.add_node("iso".into(), 0.0, 0.0).unwrap();
        let s = b.build().unwrap();
        let ids = ["a", "b", "c", "d"];
        let mut b = RoadGraphBuilder::new();
        for (k, id) in ids.iter().enumerate() {
            b.add_node((*id).into(), k as f64, 0.0).unwrap();
        }
        let mut r = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                b.add_road(format!("r{r}").into(), vec![ids[i].into(), ids[j].into()]);
                r += 1;
            }
        }
        (s, b.build().unwrap())
    }

    #[test]
    fn isolated_against_k4() {
        let (s, t) = k4_plus_isolated();
        let d = struct_diff(&s, &t);
        assert_eq!(d.row(0), &[-3.0, -3.0, -3.0, -3.0]);
        assert_eq!(struct_diff(&t, &s).transpose(), d.map(|x| -x));
        assert_eq!(struct_diff(&t, &t), Matrix::zeros(4, 4));
    }

    #[test]
    fn pseudo_distance_bounded_by_sqrt2() {
        let (_, t) = k4_plus_isolated();
        let p = PseudoCoordinates::build(&t);
        let d = pairwise_distance(&p.coords, &p.coords);
        assert!(d.data().iter().all(|&x| (0.0..=2f64.sqrt()).contains(&x)));
    }
}
