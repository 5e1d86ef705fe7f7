use std::path::{Path, PathBuf};
use zeroseg::{checkpoint, corpus, formats, store};
use zeroseg_core::backbone;
use zeroseg_core::graph::Graph;
use zeroseg_core::model::infer_image;
use zeroseg_core::seghead;

fn hist(assign: &[f32], cols: usize) -> Vec<usize> {
    let mut counts = vec![0usize; cols];
    for row in assign.chunks(cols) {
        let arg =
            row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        counts[arg] += 1;
    }
    counts
}

fn token_spread(tokens: &[f32], m: usize, d: usize) -> f32 {
    let mut worst = 0.0f32;
    for a in 0..m {
        for b in (a + 1)..m {
            let dist: f32 = (0..d)
                .map(|k| (tokens[a * d + k] - tokens[b * d + k]).abs())
                .sum();
            worst = worst.max(dist);
        }
    }
    worst
}

#[test]
#[ignore]
fn trajectory() {
    let run: PathBuf = std::env::var("DIAG_RUN").unwrap().into();
    let corpus_dir: PathBuf = std::env::var("DIAG_CORPUS").unwrap().into();
    let fstore = store::FeatureStore::open(Path::new(&std::env::var("DIAG_FEATURES").unwrap()))
        .unwrap();
    let table = corpus::read_class_table(&corpus_dir).unwrap();

    let mut ckpts: Vec<PathBuf> = std::fs::read_dir(&run)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            p.file_name()?.to_str()?.starts_with("ckpt-").then_some(p)
        })
        .collect();
    ckpts.sort();

    let (image, _, _) =
        formats::read_ppm(&corpus_dir.join("images/img-000.ppm")).unwrap();
    let feats = fstore.features_for("img-000").unwrap();

    for ckpt_dir in ckpts {
        let ckpt = checkpoint::load(&ckpt_dir).unwrap();
        let cfg = &ckpt.config.model;
        let patches = backbone::patchify(&image, &cfg.backbone).unwrap();
        let out = infer_image(&ckpt.params, cfg, &patches).unwrap();
        let counts = hist(&out.assignment, out.m);

        // per-stage histograms
        let mut g: Graph<f32> = Graph::new();
        let binding = ckpt.params.bind(&mut g).unwrap();
        let n = backbone::n_patches(&cfg.backbone);
        let all: Vec<usize> = (0..n).collect();
        let pid = g.leaf(&patches).unwrap();
        let (encoded, _) =
            backbone::encoder_forward(&mut g, &binding, &cfg.backbone, pid, &all).unwrap();
        let seg = seghead::seghead_forward(
            &mut g,
            &binding,
            &cfg.seghead,
            cfg.backbone.encoder_heads,
            encoded,
            None,
            true,
        )
        .unwrap();
        let s1 = g.value_f32(seg.stage1_assign);
        let s2 = g.value_f32(seg.stage2_assign);
        let h1 = hist(&s1, cfg.seghead.stage_tokens.0);
        let h2 = hist(&s2, cfg.seghead.stage_tokens.1);
        println!("  stage1 {h1:?}\n  stage2 {h2:?}");
        // per-token: nearest local view index + L1 distance to it
        let local: Vec<usize> = (0..feats.len())
            .filter(|&v| feats.specs[v].grid != 1)
            .collect();
        let mut nearest = Vec::new();
        for t in 0..out.m {
            let tok = &out.segment_tokens[t * out.dim..(t + 1) * out.dim];
            let (mut bi, mut bd) = (usize::MAX, f32::INFINITY);
            for &v in &local {
                let row = feats.row(v);
                let d: f32 = tok.iter().zip(row).map(|(a, b)| (a - b).abs()).sum();
                if d < bd {
                    bd = d;
                    bi = v;
                }
            }
            nearest.push((bi, bd));
        }
        let spread = token_spread(&out.segment_tokens, out.m, out.dim);
        let views: Vec<usize> = nearest.iter().map(|&(v, _)| v).collect();
        let dists: Vec<String> = nearest.iter().map(|&(_, d)| format!("{d:.2}")).collect();
        println!(
            "{}: assign {counts:?} spread {spread:.3} views {views:?} dist [{}]",
            ckpt_dir.file_name().unwrap().to_str().unwrap(),
            dists.join(",")
        );
    }
}
