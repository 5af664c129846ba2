use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sredgenet::autodiff::AdamState;
use sredgenet::edge_net::{branch_average, multi_complexity_fuse};
use sredgenet::imageproc::{bicubic_resize, offset_fix, psnr, ssim};
use sredgenet::training::{sample_aligned, Augment};
use sredgenet::{Checkpoint, EdgeMap, FlatConfig, ImageBuffer, ParamSet, Plane, Tensor};

fn edge_map(h: usize, w: usize) -> impl Strategy<Value = EdgeMap> {
    prop::collection::vec(0.0f32..=1.0, h * w).prop_map(move |d| EdgeMap::new(Plane::new(h, w, d).unwrap()))
}

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = ImageBuffer> {
    prop::collection::vec(0.0f32..=1.0, c * h * w).prop_map(move |d| ImageBuffer::new(c, h, w, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fusion_is_order_free_and_idempotent(
        maps in prop::collection::vec(edge_map(3, 4), 1..6),
        rot in 0usize..6,
    ) {
        let fused = multi_complexity_fuse(&maps).unwrap();
        let mut turned = maps.clone();
        turned.rotate_left(rot % maps.len());
        turned.reverse();
        prop_assert_eq!(&multi_complexity_fuse(&turned).unwrap(), &fused);
        let same = vec![fused.clone(); maps.len()];
        prop_assert_eq!(&multi_complexity_fuse(&same).unwrap(), &fused);
        for v in &fused.data {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn branch_average_is_symmetric(a in edge_map(4, 4), b in edge_map(4, 4)) {
        prop_assert_eq!(branch_average(&a, &b).unwrap(), branch_average(&b, &a).unwrap());
        prop_assert_eq!(branch_average(&a, &a).unwrap(), a);
    }

    #[test]
    fn offset_fix_is_idempotent(h in 8usize..40, w in 8usize..40) {
        let img = ImageBuffer::from_fn(3, h, w, |c, y, x| ((c + 3 * y + 5 * x) % 11) as f32 / 10.0).unwrap();
        let f = offset_fix(&img).unwrap();
        prop_assert_eq!(f.hw(), (h - h % 8, w - w % 8));
        prop_assert_eq!(offset_fix(&f).unwrap(), f);
    }

    #[test]
    fn resize_stays_in_range(img in image(1, 6, 7), ho in 1usize..20, wo in 1usize..20) {
        let r = bicubic_resize(&img, (ho, wo)).unwrap();
        prop_assert_eq!(r.hw(), (ho, wo));
        prop_assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn metrics_are_symmetric(a in image(3, 12, 14), b in image(3, 12, 14)) {
        prop_assert_eq!(psnr(&a, &b, 2).unwrap(), psnr(&b, &a, 2).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(s <= 1.0 + 1e-12);
    }

    #[test]
    fn augment_inverse_round_trips(rot in 0u8..4, hflip: bool, vflip: bool, img in image(3, 3, 5)) {
        let a = Augment { rot90: rot, hflip, vflip };
        prop_assert_eq!(a.inverse().apply(&a.apply(&img)), img);
    }

    #[test]
    fn sampled_patches_stay_aligned(seed: u64, scale in prop::sample::select(vec![2usize, 4])) {
        let hr = ImageBuffer::from_fn(3, 16 * scale, 12 * scale, |c, y, x| ((c * 7 + y * 13 + x * 17) % 97) as f32 / 96.0).unwrap();
        let lr = bicubic_resize(&hr, (16, 12)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (patches, rec) = sample_aligned(&[(&lr, 1), (&hr, scale)], 6, true, "p", &mut rng).unwrap();
        let (oy, ox) = rec.lr_origin;
        let (hy, hx) = rec.hr_origin();
        prop_assert_eq!((hy, hx), (oy * scale, ox * scale));
        let undo = rec.augment.inverse();
        prop_assert_eq!(undo.apply(&patches[0]), lr.crop(oy, ox, 6, 6).unwrap());
        prop_assert_eq!(undo.apply(&patches[1]), hr.crop(hy, hx, 6 * scale, 6 * scale).unwrap());
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        vals in prop::collection::vec(-1e3f32..1e3, 1..40),
        epoch in 0u64..1000,
        step in 0u64..100_000,
    ) {
        let mut params = ParamSet::new();
        params.insert("a.weight", Tensor::new(&[vals.len()], vals.clone()).unwrap());
        params.insert("b.bias", Tensor::new(&[1, 1], vec![vals[0]]).unwrap());
        let mut cfg = FlatConfig::new();
        cfg.set("train.seed", step);
        let mut ck = Checkpoint::new(params, cfg);
        ck.epoch = epoch;
        ck.step = step;
        ck.adam = AdamState::new(&ck.params);
        ck.adam.t = step;
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
        prop_assert_eq!(back.params.get("a.weight").unwrap().data(), &vals[..]);
    }

    #[test]
    fn config_text_round_trips(vals in prop::collection::btree_map("[a-z]{1,6}\\.[a-z_]{1,8}", "[a-z0-9.]{1,10}", 0..8)) {
        let mut cfg = FlatConfig::new();
        for (k, v) in &vals {
            cfg.set(k.clone(), v);
        }
        let back = FlatConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
