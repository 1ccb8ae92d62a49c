use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::par;

/// Exact Euclidean k nearest rows of `query`, excluding itself. Ties go to
/// the smaller row id.
pub fn knn_neighbors(x: &FeatureMatrix, query: usize, k: usize) -> Result<Vec<usize>> {
    let n = x.n_rows();
    if k >= n {
        return Err(Error::Config(format!("k = {k} needs more than {n} rows")));
    }
    if query >= n {
        return Err(Error::Config(format!("query row {query} out of range for {n} rows")));
    }
    Ok(nearest(x, query, k))
}

/// Neighbours of every row, computed in parallel.
pub fn knn_all(x: &FeatureMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x.n_rows();
    if k >= n {
        return Err(Error::Config(format!("k = {k} needs more than {n} rows")));
    }
    Ok(par::map_range(n, |q| nearest(x, q, k)))
}

fn nearest(x: &FeatureMatrix, query: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.n_rows()).filter(|&i| i != query).map(|i| (x.sq_dist(query, i), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dense(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix::Dense { dim: rows[0].len(), rows }
    }

    #[test]
    fn nearest_point() {
        let x = dense(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0]]);
        assert_eq!(knn_neighbors(&x, 0, 1).unwrap(), vec![1]);
    }

    #[test]
    fn duplicates_and_ties() {
        let x = dense(vec![vec![1.0], vec![0.0], vec![1.0], vec![2.0]]);
        assert_eq!(knn_neighbors(&x, 0, 1).unwrap(), vec![2]);
        // rows 1 and 3 tie at distance 1 from row 2.
        assert_eq!(knn_neighbors(&x, 2, 3).unwrap(), vec![0, 1, 3]);
    }

    #[test]
    fn k_too_large() {
        let x = dense(vec![vec![1.0], vec![0.0]]);
        assert!(matches!(knn_neighbors(&x, 0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut r = crate::rng::stream(1, "knn-oracle");
        let rows: Vec<Vec<f64>> = (0..500).map(|_| (0..3).map(|_| r.gen_range(0..4) as f64).collect()).collect();
        let x = dense(rows.clone());
        let all = knn_all(&x, 5).unwrap();
        for q in 0..500 {
            let mut pairs: Vec<(f64, usize)> = Vec::new();
            for (i, row) in rows.iter().enumerate() {
                if i != q {
                    let d: f64 = row.iter().zip(&rows[q]).map(|(a, b)| (a - b).powi(2)).sum();
                    pairs.push((d, i));
                }
            }
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expect: Vec<usize> = pairs[..5].iter().map(|p| p.1).collect();
            assert_eq!(all[q], expect);
            assert_eq!(knn_neighbors(&x, q, 5).unwrap(), expect);
        }
    }
}
