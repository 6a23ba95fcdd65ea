//! Finite-difference validation of the analytic gradients, from single
//! operations up to the complete pipeline objective on the toy
//! configuration (D=8, T=4, L=2, N=64, K=4).
//!
//! The pipeline check runs the smooth quantizer surrogate (no rounding) so
//! the objective is differentiable everywhere, with the channel pinned to
//! one drawn realization; the straight-through contract of the hard path
//! has its own direct tests in the quantizer module.

use pcjscc::channel::ChannelKind;
use pcjscc::config::Config;
use pcjscc::loss::LossWeights;
use pcjscc::model::{ChannelDraw, Pipeline, QuantMode};
use pcjscc::random::{rng_stream, stream};
use pcjscc::tensor::gradcheck::max_rel_err;
use pcjscc::tensor::{Tape, Tensor};
use pcjscc::trainer::{batch_tensors, Dataset};

fn toy_config() -> Config {
    Config::from_toml(
        r#"
seed = 2024
[encoder]
depth = 2
dim = 8
heads = 4
tokens = 4
ffn_hidden = 16
[data]
count = 2
points = 64
val_fraction = 0.5
[decoder]
snr_hidden = 8
residual_hidden = 16
[quant]
bits = 6
alpha_init = 4.0
"#,
    )
    .unwrap()
}

struct PipelineProbe {
    pipeline: Pipeline,
    rel: Tensor,
    reference: Tensor,
    draw: ChannelDraw,
}

impl PipelineProbe {
    fn new() -> PipelineProbe {
        let cfg = toy_config();
        let pipeline = Pipeline::new(&cfg).unwrap();
        let dataset = Dataset::build(&cfg, &pipeline).unwrap();
        let items: Vec<_> = dataset.train.iter().collect();
        let (rel, reference) = batch_tensors(&items);
        let mut rng = rng_stream(cfg.seed, stream::TRAIN_CHANNEL);
        let draw = ChannelDraw::sample(
            ChannelKind::Awgn,
            3.0,
            0.0,
            items.len(),
            cfg.encoder.tokens * cfg.encoder.dim,
            &mut rng,
        );
        PipelineProbe {
            pipeline,
            rel,
            reference,
            draw,
        }
    }

    fn objective(&self) -> f64 {
        let g = Tape::no_grad();
        self.pipeline
            .forward_train(
                &g,
                &self.rel,
                &self.reference,
                &self.draw,
                LossWeights::default(),
                0.1,
                QuantMode::Smooth,
                false,
            )
            .unwrap()
            .breakdown
            .total
            .item()
    }

    fn analytic_gradients(&self) -> Vec<(String, Vec<f64>)> {
        let g = Tape::new();
        let out = self
            .pipeline
            .forward_train(
                &g,
                &self.rel,
                &self.reference,
                &self.draw,
                LossWeights::default(),
                0.1,
                QuantMode::Smooth,
                false,
            )
            .unwrap();
        g.backward(&out.breakdown.total);
        self.pipeline
            .parameters()
            .iter()
            .map(|(name, p)| {
                let grad = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
                p.zero_grad();
                (name.clone(), grad)
            })
            .collect()
    }
}

#[test]
fn full_pipeline_gradients_match_central_differences() {
    let started = std::time::Instant::now();
    let probe = PipelineProbe::new();
    let analytic = probe.analytic_gradients();
    let params = probe.pipeline.parameters();
    let step = 1e-5;

    let mut total_params = 0usize;
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for ((name, p), (gname, grad)) in params.iter().zip(&analytic) {
        assert_eq!(name, gname);
        let base = p.to_vec();
        let mut fd = vec![0.0; base.len()];
        let mut probe_vec = base.clone();
        for i in 0..base.len() {
            probe_vec[i] = base[i] + step;
            p.set_data(&probe_vec);
            let up = probe.objective();
            probe_vec[i] = base[i] - step;
            p.set_data(&probe_vec);
            let down = probe.objective();
            probe_vec[i] = base[i];
            fd[i] = (up - down) / (2.0 * step);
        }
        p.set_data(&base);
        let err = max_rel_err(grad, &fd);
        if err > worst {
            worst = err;
            worst_name = name.clone();
        }
        total_params += base.len();
        assert!(
            err < 1e-4,
            "parameter {name}: max relative gradient error {err:.3e}"
        );
    }
    println!(
        "checked {total_params} parameters in {:.1?}; worst relative error {worst:.3e} ({worst_name})",
        started.elapsed()
    );
    assert!(started.elapsed().as_secs() < 60, "gradient suite exceeded one minute");
}

#[test]
fn loss_gradient_wrt_decoder_output_matches_central_differences() {
    // total objective differentiated through the reconstruction input alone
    let mut rng = rng_stream(7, 0);
    let reference: Vec<f64> = (0..32 * 3)
        .map(|_| pcjscc::random::uniform_open01(&mut rng))
        .collect();
    let recon: Vec<f64> = (0..24 * 3)
        .map(|_| pcjscc::random::uniform_open01(&mut rng))
        .collect();

    let eval = |xs: &[f64]| -> f64 {
        let g = Tape::no_grad();
        let r = Tensor::from_vec(&[1, 32, 3], reference.clone());
        let x = Tensor::from_vec(&[1, 24, 3], xs.to_vec());
        pcjscc::loss::chamfer(&g, &r, &x).unwrap().item()
    };
    let g = Tape::new();
    let r = Tensor::from_vec(&[1, 32, 3], reference.clone());
    let x = Tensor::param(&[1, 24, 3], recon.clone());
    let cd = pcjscc::loss::chamfer(&g, &r, &x).unwrap();
    g.backward(&cd);
    let fd = pcjscc::tensor::gradcheck::central_diff(eval, &recon, 1e-5);
    assert!(max_rel_err(&x.grad().unwrap(), &fd) < 1e-4);
}

#[test]
fn hard_path_gradients_are_finite_and_nonzero() {
    // the STE path cannot be finite-difference checked, but it must deliver
    // usable gradients to every parameter
    let probe = PipelineProbe::new();
    let g = Tape::new();
    let out = probe
        .pipeline
        .forward_train(
            &g,
            &probe.rel,
            &probe.reference,
            &probe.draw,
            LossWeights::default(),
            0.1,
            QuantMode::Hard,
            false,
        )
        .unwrap();
    g.backward(&out.breakdown.total);
    let mut nonzero = 0usize;
    let mut count = 0usize;
    for (name, p) in probe.pipeline.parameters() {
        let grad = p.grad().unwrap_or_else(|| panic!("{name} missing gradient"));
        assert!(grad.iter().all(|v| v.is_finite()), "{name} has non-finite gradient");
        if grad.iter().any(|&v| v != 0.0) {
            nonzero += 1;
        }
        count += 1;
    }
    assert!(
        nonzero * 10 >= count * 9,
        "only {nonzero}/{count} parameters received nonzero hard-path gradients"
    );
}

#[test]
fn encoder_stack_gradients_match_central_differences_standalone() {
    // L=2 transformer encoder over random tokens, all parameters
    let cfg = toy_config();
    let pipeline = Pipeline::new(&cfg).unwrap();
    let mut rng = rng_stream(5, 0);
    let x_data: Vec<f64> = (0..2 * 4 * 8)
        .map(|_| pcjscc::random::uniform_symmetric(&mut rng, 1.0))
        .collect();

    let eval = |pipeline: &Pipeline| -> f64 {
        let g = Tape::no_grad();
        let x = Tensor::from_vec(&[2, 4, 8], x_data.clone());
        let weights: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64) * 0.1 + 0.2).collect();
        let w = Tensor::from_vec(&[2, 4, 8], weights);
        g.sum_all(&g.mul(&w, &g.square(&pipeline.encoder.encode(&g, &x)))).item()
    };

    let g = Tape::new();
    let x = Tensor::from_vec(&[2, 4, 8], x_data.clone());
    let weights: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64) * 0.1 + 0.2).collect();
    let w = Tensor::from_vec(&[2, 4, 8], weights);
    let loss = g.sum_all(&g.mul(&w, &g.square(&pipeline.encoder.encode(&g, &x))));
    g.backward(&loss);

    let step = 1e-5;
    let mut params = Vec::new();
    pipeline.encoder.collect("encoder", &mut params);
    for (name, p) in &params {
        let grad = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
        let base = p.to_vec();
        let mut fd = vec![0.0; base.len()];
        let mut buf = base.clone();
        for i in 0..base.len() {
            buf[i] = base[i] + step;
            p.set_data(&buf);
            let up = eval(&pipeline);
            buf[i] = base[i] - step;
            p.set_data(&buf);
            let down = eval(&pipeline);
            buf[i] = base[i];
            fd[i] = (up - down) / (2.0 * step);
        }
        p.set_data(&base);
        let err = max_rel_err(&grad, &fd);
        assert!(err < 1e-4, "encoder parameter {name}: rel err {err:.3e}");
    }
}
