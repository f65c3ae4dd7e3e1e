// Temporary sizing probe (removed before ship).
use candle_core::{DType, Device, Tensor};
use geodistill_core::encoder::EncoderConfig;
use geodistill_core::heads::{count_model_parameters, GeometryModel, HeadConfig};
use geodistill_core::nn::ParamBuilder;

#[test]
fn probe_counts_and_timing() {
    let heads = HeadConfig::default();
    let t_cfg = EncoderConfig::teacher();
    let s_cfg = EncoderConfig::student();
    let t_count = count_model_parameters(&t_cfg, &heads).unwrap();
    let s_count = count_model_parameters(&s_cfg, &heads).unwrap();
    println!(
        "teacher {t_count} params, student {s_count} params, ratio {:.4}",
        s_count as f64 / t_count as f64
    );

    for (name, cfg) in [("teacher", &t_cfg), ("student", &s_cfg)] {
        let rng = geodistill_core::rng::stream(0, "probe", &[]);
        let mut pb = ParamBuilder::init(DType::F32, rng);
        let model = GeometryModel::new(&mut pb, cfg, &heads).unwrap();
        let set = pb.finish();
        let images = Tensor::rand(0f32, 1f32, (1, 4, 3, 64, 64), &Device::Cpu).unwrap();
        // warmup
        let _ = model.forward(&images).unwrap();
        let t0 = std::time::Instant::now();
        let reps = 5;
        for _ in 0..reps {
            let out = model.forward(&images).unwrap();
            drop(out);
        }
        let fwd = t0.elapsed().as_secs_f64() / reps as f64;

        // Training step cost: forward + backward on batch of 4 scenes.
        let batch = Tensor::rand(0f32, 1f32, (4, 4, 3, 64, 64), &Device::Cpu).unwrap();
        let t0 = std::time::Instant::now();
        let out = model.forward(&batch).unwrap();
        let loss = out
            .depth
            .sqr()
            .unwrap()
            .mean_all()
            .unwrap()
            .add(&out.theta.sqr().unwrap().mean_all().unwrap())
            .unwrap()
            .add(&out.points.sqr().unwrap().mean_all().unwrap())
            .unwrap();
        let grads = loss.backward().unwrap();
        let step = t0.elapsed().as_secs_f64();
        let got_grads = set
            .trainable_vars()
            .iter()
            .filter(|v| grads.get(v.as_tensor()).is_some())
            .count();
        println!(
            "{name}: fwd(N=4,B=1) {:.3}s, fwd+bwd(B=4) {:.3}s, {got_grads}/{} vars with grads",
            fwd,
            step,
            set.trainable_vars().len()
        );
    }
}

#[test]
fn probe_backward_split() {
    let heads = HeadConfig::default();
    let t_cfg = EncoderConfig::teacher();
    let rng = geodistill_core::rng::stream(0, "probe2", &[]);
    let mut pb = ParamBuilder::init(DType::F32, rng);
    let model = GeometryModel::new(&mut pb, &t_cfg, &heads).unwrap();
    let _set = pb.finish();
    let batch = Tensor::rand(0f32, 1f32, (4, 4, 3, 64, 64), &Device::Cpu).unwrap();

    // Encoder-only backward.
    let t0 = std::time::Instant::now();
    let enc = model.encoder.forward(&batch).unwrap();
    let loss = enc.tokens.sqr().unwrap().mean_all().unwrap();
    let _ = loss.backward().unwrap();
    println!("encoder fwd+bwd: {:.3}s", t0.elapsed().as_secs_f64());

    // Full model, loss on depth only.
    let t0 = std::time::Instant::now();
    let enc = model.encoder.forward(&batch).unwrap();
    let out = model.forward_from_encoded(&enc).unwrap();
    let loss = out.depth.sqr().unwrap().mean_all().unwrap();
    let _ = loss.backward().unwrap();
    println!("full (depth loss) fwd+bwd: {:.3}s", t0.elapsed().as_secs_f64());
}
