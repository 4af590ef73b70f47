use maskseed::eval::{
    auc, average_recall, evaluate, greedy_match, iou_bitmap, iou_box, iou_mask, recall_vs_iou, stratify_by_scale,
    EvalConfig, GtImage, GtInstance,
};
use maskseed::inference::ProposalRecord;
use maskseed::mask::{BBox, Bitmap, Rle};
use proptest::prelude::*;

fn bitmap(w: usize, h: usize, on: &[(usize, usize)]) -> Bitmap {
    let mut m = Bitmap::new(w, h);
    for &(x, y) in on {
        m.set(x, y, true);
    }
    m
}

#[test]
fn mask_iou_one_of_three() {
    let a = bitmap(2, 2, &[(0, 0), (1, 0)]);
    let b = bitmap(2, 2, &[(1, 0), (1, 1)]);
    assert_eq!(iou_bitmap(&a, &b).unwrap(), 1.0 / 3.0);
    assert_eq!(iou_mask(&a.to_rle(), &b.to_rle()).unwrap(), 1.0 / 3.0);
    assert_eq!(iou_bitmap(&a, &a).unwrap(), 1.0);
    assert_eq!(iou_bitmap(&a, &bitmap(2, 2, &[(0, 1)])).unwrap(), 0.0);
    assert_eq!(iou_bitmap(&Bitmap::new(2, 2), &Bitmap::new(2, 2)).unwrap(), 0.0);
    assert!(iou_bitmap(&a, &Bitmap::new(3, 2)).is_err());
}

#[test]
fn box_iou_examples() {
    let a = BBox::from([0, 0, 2, 2]);
    assert_eq!(iou_box(&a, &BBox::from([1, 1, 2, 2])), 1.0 / 7.0);
    assert_eq!(iou_box(&a, &a), 1.0);
    assert_eq!(iou_box(&BBox::from([1, 1, 2, 2]), &BBox::from([0, 0, 4, 4])), 0.25);
    assert_eq!(iou_box(&a, &BBox::from([5, 5, 2, 2])), 0.0);
}

#[test]
fn greedy_examples() {
    let r = greedy_match(&[vec![1.0]], &[1]);
    assert_eq!(r.gt_match, vec![Some(0)]);
    assert_eq!(r.gt_iou, vec![1.0]);
    let r = greedy_match(&[vec![0.6, 0.8]], &[1, 2]);
    assert_eq!(r.gt_match, vec![None, Some(0)]);
    assert_eq!(r.gt_iou, vec![0.0, 0.8]);
    // equal IoU: the lower gt id wins
    let r = greedy_match(&[vec![0.5, 0.5]], &[9, 4]);
    assert_eq!(r.gt_match, vec![None, Some(0)]);
}

#[test]
fn average_recall_examples() {
    assert_eq!(average_recall(&[1.0, 1.0]), Some(1.0));
    assert_eq!(average_recall(&[0.4, 0.4]), Some(0.0));
    assert_eq!(average_recall(&[0.72]), Some(0.5));
    assert_eq!(average_recall(&[]), None);
}

#[test]
fn auc_examples() {
    assert!((auc(&[0.1, 0.2, 0.3]) - 0.2).abs() < 1e-15);
    assert_eq!(auc(&[0.0; 13]), 0.0);
    assert_eq!(auc(&[0.375; 13]), 0.375);
}

#[test]
fn scale_boundaries() {
    let [s, m, l] = stratify_by_scale(&[1023, 1024, 9216, 9217]);
    assert_eq!(s, vec![0]);
    assert_eq!(m, vec![1, 2]);
    assert_eq!(l, vec![3]);
}

#[test]
fn recall_curve_examples() {
    let t = [0.5, 0.75, 1.0];
    assert_eq!(recall_vs_iou(&[1.0, 1.0], &t), vec![1.0; 3]);
    assert_eq!(recall_vs_iou(&[], &t), vec![0.0; 3]);
    assert_eq!(recall_vs_iou(&[0.6, 0.8], &t), vec![1.0, 0.5, 0.0]);
}

fn gt_image(id: u64, masks: &[Bitmap]) -> GtImage {
    let (w, h) = (masks[0].width(), masks[0].height());
    GtImage {
        image_id: id,
        width: w,
        height: h,
        instances: masks
            .iter()
            .enumerate()
            .map(|(i, m)| GtInstance {
                id: i as u64 + 1,
                mask: m.to_rle(),
                bbox: m.bbox().unwrap(),
                area: m.area(),
            })
            .collect(),
    }
}

fn record(image_id: u64, score: f64, m: &Bitmap) -> ProposalRecord {
    ProposalRecord {
        image_id,
        score,
        bbox: m.bbox().unwrap_or(BBox::from([0, 0, 0, 0])),
        rle: m.to_rle().counts,
        scale: 1.0,
        cell: [0, 0],
    }
}

fn random_masks(w: usize, h: usize, n: usize, seed: u64) -> Vec<Bitmap> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as usize
    };
    (0..n)
        .map(|_| {
            let (x0, y0) = (next() % (w - 1), next() % (h - 1));
            let (x1, y1) = (x0 + 1 + next() % (w - x0 - 1), y0 + 1 + next() % (h - y0 - 1));
            Bitmap::from_fn(w, h, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
        })
        .collect()
}

#[test]
fn ground_truth_as_proposals_gives_full_recall() {
    let images: Vec<GtImage> = (0..5).map(|i| gt_image(i, &random_masks(24, 16, 4, i))).collect();
    let props: Vec<ProposalRecord> = images
        .iter()
        .flat_map(|g| {
            g.instances
                .iter()
                .map(move |inst| record(g.image_id, 1.0, &inst.mask.decode()))
        })
        .collect();
    let r = evaluate(&images, &props, &EvalConfig::default()).unwrap();
    for b in [10, 100, 1000] {
        assert_eq!(r.ar(b), Some(1.0));
    }
    assert_eq!(r.auc, Some(auc(&[0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])));
}

#[test]
fn no_proposals_gives_zero_recall() {
    let images = vec![gt_image(3, &random_masks(20, 20, 2, 5))];
    let r = evaluate(&images, &[], &EvalConfig::default()).unwrap();
    assert_eq!(r.ar(10), Some(0.0));
    assert_eq!(r.auc, Some(0.0));
}

#[test]
fn proposals_for_unknown_images_are_rejected() {
    let images = vec![gt_image(3, &random_masks(20, 20, 2, 5))];
    let m = random_masks(20, 20, 1, 1);
    assert!(evaluate(&images, &[record(4, 0.5, &m[0])], &EvalConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_iou_is_symmetric_and_bounded(bits_a in proptest::collection::vec(any::<bool>(), 48),
                                         bits_b in proptest::collection::vec(any::<bool>(), 48)) {
        let a = Bitmap::from_bits(8, 6, bits_a).unwrap();
        let b = Bitmap::from_bits(8, 6, bits_b).unwrap();
        let ab = iou_mask(&a.to_rle(), &b.to_rle()).unwrap();
        prop_assert_eq!(ab.to_bits(), iou_mask(&b.to_rle(), &a.to_rle()).unwrap().to_bits());
        prop_assert_eq!(ab.to_bits(), iou_bitmap(&a, &b).unwrap().to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn box_iou_is_symmetric(a in (0usize..10, 0usize..10, 0usize..8, 0usize..8),
                            b in (0usize..10, 0usize..10, 0usize..8, 0usize..8)) {
        let a = BBox::from([a.0, a.1, a.2, a.3]);
        let b = BBox::from([b.0, b.1, b.2, b.3]);
        prop_assert_eq!(iou_box(&a, &b).to_bits(), iou_box(&b, &a).to_bits());
    }

    #[test]
    fn recall_grows_with_budget_and_falls_with_threshold(seed in any::<u64>(), n in 1usize..30) {
        let gts = random_masks(16, 16, 4, seed);
        let props = random_masks(16, 16, n, seed ^ 0x5a5a);
        let images = vec![gt_image(1, &gts)];
        let records: Vec<ProposalRecord> = props
            .iter()
            .enumerate()
            .map(|(i, m)| record(1, 1.0 - i as f64 / 64.0, m))
            .collect();
        let cfg = EvalConfig { report_budgets: vec![1, 2, 5, 10, 30], ..EvalConfig::default() };
        let r = evaluate(&images, &records, &cfg).unwrap();
        let ars: Vec<f64> = cfg.report_budgets.iter().map(|&b| r.ar(b).unwrap()).collect();
        prop_assert!(ars.windows(2).all(|w| w[0] <= w[1]), "{:?}", ars);
        for c in &r.recall_vs_iou {
            prop_assert!(c.recall.windows(2).all(|w| w[0] >= w[1]), "{:?}", c.recall);
        }
    }

    #[test]
    fn rle_round_trips(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mut s = seed;
        let m = Bitmap::from_fn(w, h, |_, _| { s = s.rotate_left(7) ^ 0x9e3779b97f4a7c15; s & 3 == 0 });
        let rle = Rle::encode(&m);
        prop_assert_eq!(rle.decode(), m.clone());
        prop_assert_eq!(rle.area() as usize, m.area());
        prop_assert_eq!(rle.bbox(), m.bbox());
        let again = Rle::from_counts(w, h, rle.counts.clone()).unwrap();
        prop_assert_eq!(again, rle);
    }
}
