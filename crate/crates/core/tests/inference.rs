use maskseed::check::random_image;
use maskseed::inference::{
    build_pyramid, level_dims, paste_cell, propose, rank_proposals, DenseModel, Proposal, PyramidConfig, ZOOM_SCALE,
};
use maskseed::mask::{BBox, Bitmap, Rle};
use maskseed::model::{ModelConfig, ModelParams};
use maskseed::rng::stream;

fn footprint(cell: (usize, usize), factor: f64, w: usize, h: usize) -> Bitmap {
    // level window [16 g - 24, 16 g + 40) mapped back through the level factor
    let lo_x = (16 * cell.1) as f64 - 24.0;
    let lo_y = (16 * cell.0) as f64 - 24.0;
    Bitmap::from_fn(w, h, |x, y| {
        let lx = (x as f64 + 0.5) * factor;
        let ly = (y as f64 + 0.5) * factor;
        lx >= lo_x && lx < lo_x + 64.0 && ly >= lo_y && ly < lo_y + 64.0
    })
}

#[test]
fn confident_cell_pastes_its_whole_window() {
    let logits = vec![20.0f32; 16 * 16];
    for (cell, factor) in [((0, 0), 1.0), ((1, 2), 1.0), ((3, 1), 0.5), ((2, 2), 2.0)] {
        let (w, h) = (150, 120);
        let m = paste_cell(&logits, 16, 64, cell, factor, factor, w, h, 0.5);
        assert_eq!(m, footprint(cell, factor, w, h), "cell {cell:?} factor {factor}");
    }
    let off = paste_cell(&vec![-20.0f32; 256], 16, 64, (1, 1), 1.0, 1.0, 100, 100, 0.5);
    assert!(off.is_empty());
}

#[test]
fn left_half_logits_paste_left_half() {
    let logits: Vec<f32> = (0..256).map(|i| if i % 16 < 8 { 20.0 } else { -20.0 }).collect();
    let m = paste_cell(&logits, 16, 64, (2, 2), 1.0, 1.0, 128, 128, 0.5);
    let b = m.bbox().unwrap();
    assert_eq!(b, BBox::from([8, 8, 32, 64]));
    assert_eq!(m.area(), 32 * 64);
}

#[test]
fn pyramid_levels_are_multiples_of_32() {
    let img = random_image(200, 150, &mut stream(0, "img", 0));
    let cfg = PyramidConfig {
        zoom: true,
        ..PyramidConfig::default()
    };
    let levels = build_pyramid(&img, &cfg, 64).unwrap();
    for l in &levels {
        assert_eq!(l.image.width() % 32, 0);
        assert_eq!(l.image.height() % 32, 0);
        assert_eq!((l.image.width(), l.image.height()), level_dims(200, 150, l.scale));
        assert!(l.image.width() >= 64 && l.image.height() >= 64);
    }
    assert!(levels.windows(2).all(|w| w[0].scale < w[1].scale));
    assert!(!levels.iter().any(|l| l.scale == ZOOM_SCALE), "zoom level of a 200px image is too small");
}

fn model() -> ModelParams<f32> {
    ModelParams::build(&ModelConfig::desk(), &mut stream(8, "init", 0)).unwrap()
}

fn best_ious(proposals: &[Proposal], gts: &[Rle]) -> Vec<f64> {
    gts.iter()
        .map(|g| {
            proposals
                .iter()
                .map(|p| maskseed::eval::iou_mask(&p.mask, g).unwrap())
                .fold(0.0, f64::max)
        })
        .collect()
}

#[test]
fn zoom_never_lowers_best_overlap() {
    let params = model();
    let dense = DenseModel::new(&params).unwrap();
    let img = random_image(384, 384, &mut stream(2, "img", 0));
    let gts: Vec<Rle> = [(40, 40, 60, 50), (150, 200, 120, 100), (10, 300, 30, 30)]
        .iter()
        .map(|&(x, y, w, h)| Bitmap::from_fn(384, 384, |a, b| a >= x && a < x + w && b >= y && b < y + h).to_rle())
        .collect();
    let base = PyramidConfig {
        max_proposals: usize::MAX,
        mask_threshold: 0.5,
        ..PyramidConfig::default()
    };
    let plain = propose(&dense, &img, &base, 1).unwrap();
    let zoomed = propose(&dense, &img, &PyramidConfig { zoom: true, ..base }, 1).unwrap();
    assert!(zoomed.len() >= plain.len());
    assert!(zoomed.iter().any(|p| p.scale == ZOOM_SCALE));
    for (a, b) in best_ious(&plain, &gts).iter().zip(best_ious(&zoomed, &gts)) {
        assert!(b >= *a, "{a} -> {b}");
    }
}

#[test]
fn proposals_are_ranked_and_capped() {
    let params = model();
    let dense = DenseModel::new(&params).unwrap();
    let img = random_image(96, 128, &mut stream(3, "img", 0));
    let cfg = PyramidConfig {
        max_proposals: 25,
        ..PyramidConfig::default()
    };
    let p = propose(&dense, &img, &cfg, 7).unwrap();
    assert!(p.len() <= 25);
    assert!(p.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(p.iter().all(|q| q.image_id == 7 && q.mask.width == 96 && q.mask.height == 128));
    assert_eq!(p, propose(&dense, &img, &cfg, 7).unwrap());
    assert_eq!(rank_proposals(p.clone(), 5), p[..5.min(p.len())].to_vec());
}
