use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use cloakvit_core::crypto::{self, EncryptionParams};
use cloakvit_core::dataset::{self, CloCategory, CloValues, MappingTable, UnmatchedPolicy};
use cloakvit_core::fsutil::write_atomic;
use cloakvit_core::permkey::{SecretKey, SplitMix64, KEY_LEN};
use cloakvit_core::transform::{self, keyspace};
use cloakvit_core::vit::{self, argmax, ViTConfig};
use cloakvit_core::{imageio, Error, Image};

use crate::{CliError, Command, CryptArgs, DatasetCommand, KeyArg, Preset, Scheme, Unmatched, JSON_SCHEMA, KEY_ENV};

type CliResult<T = ()> = Result<T, CliError>;

/// Per-logit tolerance for `verify-equivalence`.
const EQUIVALENCE_TOL: f32 = 1e-5;

pub fn execute(command: Command) -> CliResult {
    match command {
        Command::Keygen { output, seed } => keygen(output.as_deref(), seed),
        Command::Encrypt(args) => crypt(&args, Direction::Encrypt),
        Command::Decrypt(args) => crypt(&args, Direction::Decrypt),
        Command::TransformModel {
            key,
            mode,
            input,
            output,
        } => {
            let key = resolve_key(&key)?;
            let (model, cfg) = vit::load_weights(&input)?;
            let params = EncryptionParams::new(cfg.patch_size, mode.into())?;
            let transformed = transform::transform_model(&model, &cfg, &key, &params)?;
            vit::save_weights(&transformed, &cfg, &output)?;
            Ok(())
        }
        Command::Infer {
            model,
            image,
            labels,
            json,
        } => infer(&model, &image, labels.as_deref(), json),
        Command::VerifyEquivalence {
            key,
            model,
            image,
            trials,
            mode,
            json,
        } => verify(&resolve_key(&key)?, &model, &image, trials, mode.into(), json),
        Command::Keyspace {
            block_size,
            image_size,
            channels,
            mode,
            json,
        } => {
            let params = EncryptionParams::new(block_size, mode.into())?;
            let ks = keyspace(image_size, channels, &params)?;
            if json {
                print_json(&serde_json::json!({
                    "schema": JSON_SCHEMA,
                    "shuffle_len": ks.shuffle_len,
                    "blocks": ks.blocks,
                    "shuffle_bits": ks.shuffle_bits,
                    "block_bits": ks.block_bits,
                    "total_bits": ks.total_bits(),
                }))
            } else {
                println!("log2({}!) = {:.6}", ks.shuffle_len, ks.shuffle_bits);
                println!("log2({}!) = {:.6}", ks.blocks, ks.block_bits);
                println!("total bits = {:.6}", ks.total_bits());
                Ok(())
            }
        }
        Command::Dataset(cmd) => dataset_command(cmd),
        Command::WeightsInfo { model, json } => weights_info(&model, json),
        Command::InitModel {
            preset,
            classes,
            seed,
            output,
        } => {
            let mut cfg = match preset {
                Preset::Toy => ViTConfig::toy(),
                Preset::VitS16 => ViTConfig::vit_s16(1000),
            };
            if let Some(c) = classes {
                cfg.num_classes = c;
            }
            cfg.validate()?;
            vit::save_weights(&vit::random_init(&cfg, seed), &cfg, &output)?;
            Ok(())
        }
    }
}

fn resolve_key(arg: &KeyArg) -> CliResult<SecretKey> {
    if let Some(path) = &arg.key {
        return Ok(SecretKey::read_file(path)?);
    }
    match std::env::var(KEY_ENV) {
        Ok(hex) => Ok(SecretKey::from_hex(hex.trim())?),
        Err(_) => Err(CliError::usage(format!("no key given: pass --key or set {KEY_ENV}"))),
    }
}

fn keygen(output: Option<&Path>, seed: Option<u64>) -> CliResult {
    let key = match seed {
        Some(s) => SecretKey::from_seed(s),
        None => {
            let mut bytes = [0u8; KEY_LEN];
            getrandom::fill(&mut bytes).map_err(|e| CliError {
                code: crate::EXIT_IO,
                message: format!("OS entropy source failed: {e}"),
            })?;
            SecretKey::from_array(bytes)
        }
    };
    let body = key.to_file_contents();
    match output {
        Some(path) => write_atomic(path, body.as_bytes())?,
        None => print!("{body}"),
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Direction {
    Encrypt,
    Decrypt,
}

fn crypt(args: &CryptArgs, dir: Direction) -> CliResult {
    let key = resolve_key(&args.key)?;
    let params = EncryptionParams::new(args.block_size, args.mode.into())?;
    let process = |input: &Path, output: &Path| -> Result<(), Error> {
        let img = imageio::read_png(input)?;
        let out = transform_image(&img, &key, &params, args.scheme, dir)?;
        write_atomic(output, &imageio::encode_png(&out)?)
    };

    if !args.dir {
        return Ok(process(&args.input, &args.output)?);
    }

    let mut inputs: Vec<PathBuf> = std::fs::read_dir(&args.input)
        .map_err(|e| io_error(&args.input, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    inputs.sort();
    std::fs::create_dir_all(&args.output).map_err(|e| io_error(&args.output, e))?;

    let results: Vec<(PathBuf, Result<(), Error>)> = inputs
        .par_iter()
        .map(|input| {
            let output = args.output.join(input.file_name().expect("read_dir entries have names"));
            (input.clone(), process(input, &output))
        })
        .collect();

    let mut worst: Option<CliError> = None;
    for (path, result) in results {
        match result {
            Ok(()) => println!("ok\t{}", path.display()),
            Err(e) => {
                println!("failed\t{}\t{e}", path.display());
                let err = CliError::from(e);
                if worst.as_ref().map_or(true, |w| err.code > w.code) {
                    worst = Some(err);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn transform_image(
    img: &Image,
    key: &SecretKey,
    params: &EncryptionParams,
    scheme: Scheme,
    dir: Direction,
) -> Result<Image, Error> {
    match (scheme, dir) {
        (Scheme::Vit, Direction::Encrypt) => crypto::encrypt_vit(img, key, params),
        (Scheme::Vit, Direction::Decrypt) => crypto::decrypt_vit(img, key, params),
        (Scheme::PixelBased, Direction::Encrypt) => crypto::encrypt_pixel_based(img, key),
        (Scheme::PixelBased, Direction::Decrypt) => crypto::decrypt_pixel_based(img, key),
    }
}

#[derive(Serialize)]
struct InferRecord<'a> {
    schema: u32,
    class_index: usize,
    class_name: Option<&'a str>,
    logits: &'a [f32],
}

fn infer(model_path: &Path, image_path: &Path, labels: Option<&Path>, json: bool) -> CliResult {
    let (model, cfg) = vit::load_weights(model_path)?;
    let img = imageio::read_png(image_path)?;
    let logits = vit::forward(&model, &cfg, &img)?;
    let class_index = argmax(&logits);

    let names = match labels {
        Some(path) => Some(read_labels(path, cfg.num_classes)?),
        None => None,
    };
    let class_name = names.as_ref().map(|n| n[class_index].as_str());

    if json {
        return print_json(&InferRecord {
            schema: JSON_SCHEMA,
            class_index,
            class_name,
            logits: &logits,
        });
    }
    match class_name {
        Some(name) => println!("class: {class_index} ({name})"),
        None => println!("class: {class_index}"),
    }
    let formatted: Vec<String> = logits.iter().map(|v| format!("{v:.6}")).collect();
    println!("logits: [{}]", formatted.join(", "));
    Ok(())
}

fn read_labels(path: &Path, classes: usize) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.len() != classes {
        return Err(CliError::usage(format!(
            "{} lists {} labels but the model has {classes} classes",
            path.display(),
            names.len()
        )));
    }
    Ok(names)
}

#[derive(Serialize)]
struct VerifyRecord {
    schema: u32,
    trials: u32,
    max_abs_logit_diff: f32,
    argmax_agreement: u32,
    tolerance: f32,
    passed: bool,
}

fn verify(
    key: &SecretKey,
    model_path: &Path,
    image_path: &Path,
    trials: u32,
    mode: cloakvit_core::ShuffleMode,
    json: bool,
) -> CliResult {
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    let (model, cfg) = vit::load_weights(model_path)?;
    let params = EncryptionParams::new(cfg.patch_size, mode)?;
    let transformed = transform::transform_model(&model, &cfg, key, &params)?;
    let first = imageio::read_png(image_path)?;

    let mut rng = SplitMix64::new(0x5eed);
    let (mut worst, mut agree) = (0f32, 0u32);
    for t in 0..trials {
        let img = if t == 0 {
            first.clone()
        } else {
            Image::from_fn(cfg.image_size, cfg.image_size, cfg.channels, |_, _, _| (rng.next_u64() >> 56) as u8)?
        };
        let plain = vit::forward(&model, &cfg, &img)?;
        let encrypted = crypto::encrypt_vit(&img, key, &params)?;
        let enc = vit::forward(&transformed, &cfg, &encrypted)?;
        for (a, b) in plain.iter().zip(&enc) {
            let d = (a - b).abs();
            if !(d <= worst) {
                worst = d;
            }
        }
        agree += u32::from(argmax(&plain) == argmax(&enc));
    }
    let outcome = verdict(worst, agree, trials);
    let passed = outcome.is_ok();

    if json {
        print_json(&VerifyRecord {
            schema: JSON_SCHEMA,
            trials,
            max_abs_logit_diff: worst,
            argmax_agreement: agree,
            tolerance: EQUIVALENCE_TOL,
            passed,
        })?;
    } else {
        println!("trials: {trials}");
        println!("max |dlogit|: {worst:.3e} (tolerance {EQUIVALENCE_TOL:.0e})");
        println!("argmax agreement: {agree}/{trials}");
        println!("result: {}", if passed { "PASS" } else { "FAIL" });
    }
    outcome
}

fn verdict(worst: f32, agree: u32, trials: u32) -> CliResult {
    if worst <= EQUIVALENCE_TOL && agree == trials {
        return Ok(());
    }
    Err(CliError::verification(format!(
        "equivalence violated: max |dlogit| {worst:.3e}, argmax agreement {agree}/{trials}"
    )))
}

fn weights_info(path: &Path, json: bool) -> CliResult {
    let (model, cfg) = vit::load_weights(path)?;
    let params = vit::param_count(&cfg);
    if json {
        let tensors: Vec<_> = model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| serde_json::json!({ "name": name, "shape": t.shape() }))
            .collect();
        return print_json(&serde_json::json!({
            "schema": JSON_SCHEMA,
            "config": cfg,
            "param_count": params,
            "tensors": tensors,
        }));
    }
    println!(
        "image {0}x{0}, patch {1}, embed {2}, depth {3}, heads {4}, mlp ratio {5}, classes {6}",
        cfg.image_size, cfg.patch_size, cfg.embed_dim, cfg.depth, cfg.heads, cfg.mlp_ratio, cfg.num_classes
    );
    println!("normalization mean {:?} std {:?}", cfg.norm.mean, cfg.norm.std);
    println!("parameters: {params}");
    for (name, t) in model.named_tensors() {
        println!("{name}\t{:?}", t.shape());
    }
    Ok(())
}

fn dataset_command(cmd: DatasetCommand) -> CliResult {
    match cmd {
        DatasetCommand::Remap {
            mapping,
            input,
            output,
            unmatched,
        } => {
            let policy = match unmatched {
                Unmatched::Error => UnmatchedPolicy::Error,
                Unmatched::Skip => UnmatchedPolicy::Skip,
            };
            let table = match mapping {
                Some(path) => MappingTable::from_json(&read_text(&path)?, policy)?,
                None => MappingTable::deepfashion_default(policy),
            };
            let entries = dataset::parse_labeled(&read_text(&input)?)?;
            let report = dataset::remap_labels(&entries, &table)?;
            write_atomic(&output, dataset::format_manifest(&report.manifest).as_bytes())?;
            let summary = dataset::summarize(&report.manifest);
            for c in CloCategory::ALL {
                eprintln!("{}\t{}", c.name(), summary.count(c));
            }
            for (label, n) in &report.skipped {
                eprintln!("skipped\t{label}\t{n}");
            }
            eprintln!("mapped {} entries, skipped {}", report.manifest.len(), report.skipped_total());
            Ok(())
        }
        DatasetCommand::Split {
            input,
            train_fraction,
            seed,
            train_out,
            test_out,
        } => {
            let manifest = dataset::parse_manifest(&read_text(&input)?)?;
            let (train, test) = dataset::split(&manifest, train_fraction, seed)?;
            write_atomic(&train_out, dataset::format_manifest(&train).as_bytes())?;
            write_atomic(&test_out, dataset::format_manifest(&test).as_bytes())?;
            println!("train {}\ttest {}", train.len(), test.len());
            Ok(())
        }
        DatasetCommand::Summarize {
            input,
            clo_values,
            json,
        } => {
            let manifest = dataset::parse_manifest(&read_text(&input)?)?;
            let clo = match clo_values {
                Some(v) => {
                    let [a, b, c, d] = v[..] else {
                        return Err(CliError::usage(format!("--clo-values needs 4 values, got {}", v.len())));
                    };
                    CloValues::new([Some(a), Some(b), Some(c), Some(d)])?
                }
                None => CloValues::default(),
            };
            let summary = dataset::summarize(&manifest);
            if json {
                let classes: Vec<_> = CloCategory::ALL
                    .iter()
                    .map(|&c| {
                        serde_json::json!({
                            "id": c.id(),
                            "name": c.name(),
                            "count": summary.count(c),
                            "percent": summary.percentage(c),
                            "reference_count": dataset::REFERENCE_CLASS_COUNTS[c as usize],
                            "clo_value": clo.get(c),
                        })
                    })
                    .collect();
                print_json(&serde_json::json!({
                    "schema": JSON_SCHEMA,
                    "total": summary.total(),
                    "classes": classes,
                    "reference_sum": dataset::REFERENCE_CLASS_COUNTS.iter().sum::<usize>(),
                    "reference_stated_total": dataset::REFERENCE_STATED_TOTAL,
                }))
            } else {
                print!("{}", dataset::render_summary(&summary, &clo));
                Ok(())
            }
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: crate::EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string(value).map_err(|e| CliError {
        code: crate::EXIT_IO,
        message: e.to_string(),
    })?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| CliError {
        code: crate::EXIT_IO,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_exit_codes() {
        assert!(verdict(0.0, 3, 3).is_ok());
        assert!(verdict(EQUIVALENCE_TOL, 1, 1).is_ok());
        assert_eq!(verdict(1e-3, 3, 3).unwrap_err().code, crate::EXIT_VERIFY);
        assert_eq!(verdict(0.0, 2, 3).unwrap_err().code, crate::EXIT_VERIFY);
        assert_eq!(verdict(f32::NAN, 1, 1).unwrap_err().code, crate::EXIT_VERIFY);
    }
}
