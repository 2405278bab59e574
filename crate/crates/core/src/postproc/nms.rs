use crate::geom::IouKind;
use crate::scalar::Real;

use super::voting::Detection;

/// Greedy score-ordered suppression; returns kept indices in keep order.
///
/// Ties in score go to the lower index.
pub fn nms_indices<T: Real>(dets: &[Detection<T>], iou_threshold: T, kind: IouKind) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| kind.eval(&dets[i].bbox, &dets[k].bbox) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

pub fn nms<T: Real>(dets: &[Detection<T>], iou_threshold: T, kind: IouKind) -> Vec<Detection<T>> {
    nms_indices(dets, iou_threshold, kind)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::OrientedBox;

    fn det(cx: f64, score: f64) -> Detection<f64> {
        Detection {
            bbox: OrientedBox::new(cx, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap(),
            score,
            variance: [1.0; 7],
        }
    }

    #[test]
    fn single_kept() {
        assert_eq!(nms_indices(&[det(0.0, 0.3)], 0.5, IouKind::Bev), vec![0]);
    }

    #[test]
    fn duplicate_suppressed() {
        let kept = nms(&[det(0.0, 0.3), det(0.0, 0.8)], 0.5, IouKind::Bev);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.8);
    }

    #[test]
    fn chain_keeps_ends() {
        // IoU(0, 0.5) = 1/3, IoU(0, 1.0) = 0; threshold 0.3 suppresses the middle
        let kept = nms_indices(&[det(0.0, 0.9), det(0.5, 0.8), det(1.0, 0.7)], 0.3, IouKind::Bev);
        assert_eq!(kept, vec![0, 2]);
    }
}
