//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use phg_core::hashcodec::{decode_grid, encode_binary_grid};
use phg_core::imaging::{apply_transform, encode_pnm, load_image_file, ImageBuffer, TransformSpec};
use phg_core::phash::{ahash, hamming, pdq, Algorithm, PerceptualHash};
use phg_core::psi::{
    blind, build_index, direct_token, evaluate, intersect, run_psi_local, unblind_finalize, ClientSet, GroupOps,
    Instrumented, OprfKey, Ristretto255,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

type Verdict = Result<String, String>;
type Transform = Box<dyn Fn(&ImageBuffer) -> TransformSpec>;
type Criterion = (u32, &'static str, Option<Duration>, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_hash(rng: &mut StdRng, algorithm: Algorithm) -> PerceptualHash {
    let bytes: Vec<u8> = (0..algorithm.byte_len()).map(|_| rng.gen()).collect();
    PerceptualHash::from_bytes(algorithm, &bytes).unwrap()
}

/// Smooth RGB scenes: low-frequency waves plus a few flat ellipses.
fn synthetic_image(seed: u64) -> ImageBuffer {
    let mut rng = StdRng::seed_from_u64(seed);
    let w = rng.gen_range(96..=192);
    let h = rng.gen_range(96..=192);
    let waves: Vec<[f64; 5]> = (0..9)
        .map(|_| {
            [
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.005..0.06),
                rng.gen_range(0.005..0.06),
                rng.gen_range(0.0..6.3),
                rng.gen_range(15.0..45.0),
            ]
        })
        .collect();
    let blobs: Vec<[f64; 7]> = (0..4)
        .map(|_| {
            [
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(8.0..w as f64 / 3.0),
                rng.gen_range(8.0..h as f64 / 3.0),
                rng.gen_range(0.0..255.0),
                rng.gen_range(0.0..255.0),
                rng.gen_range(0.0..255.0),
            ]
        })
        .collect();
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let mut px = [128.0f64; 3];
            for wave in &waves {
                let c = wave[0] as usize;
                px[c] += wave[4] * (wave[1] * x as f64 + wave[2] * y as f64 + wave[3]).sin();
            }
            for b in &blobs {
                let dx = (x as f64 - b[0]) / b[2];
                let dy = (y as f64 - b[1]) / b[3];
                if dx * dx + dy * dy <= 1.0 {
                    px = [b[4], b[5], b[6]];
                }
            }
            data.extend(px.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    ImageBuffer::rgb(w, h, data).unwrap()
}

fn corpus(n: u64) -> Vec<ImageBuffer> {
    (0..n).map(|i| synthetic_image(1000 + i)).collect()
}

// 1

fn per_bit_distance(a: &PerceptualHash, b: &PerceptualHash) -> u32 {
    let (x, y) = (a.as_bytes(), b.as_bytes());
    let mut d = 0;
    for i in 0..a.algorithm().bits() {
        let bx = (x[i / 8] >> (7 - i % 8)) & 1;
        let by = (y[i / 8] >> (7 - i % 8)) & 1;
        if bx != by {
            d += 1;
        }
    }
    d
}

fn criterion_1() -> Verdict {
    let mut rng = StdRng::seed_from_u64(1);
    for algo in [Algorithm::Ahash64, Algorithm::Pdq256] {
        for _ in 0..10_000 {
            let (a, b) = (random_hash(&mut rng, algo), random_hash(&mut rng, algo));
            let d = hamming(&a, &b).unwrap();
            let oracle = per_bit_distance(&a, &b);
            ensure(d.raw == oracle, || format!("{algo}: {} vs oracle {oracle}", d.raw))?;
            let delta = f64::from(oracle) / algo.bits() as f64;
            ensure(d.normalized() == delta, || format!("{algo}: δ {} vs {delta}", d.normalized()))?;
        }
    }
    Ok("20,000 pairs, exact".into())
}

// 2

/// Literal aHash: luma per pixel, then each 8x8 cell averaged over a fine grid
/// where every source pixel is split into 8x8 subcells.
fn brute_force_ahash(img: &ImageBuffer) -> [u8; 8] {
    let (w, h) = (img.width(), img.height());
    let luma = |x: usize, y: usize| -> u64 {
        if img.channels() == 1 {
            u64::from(img.sample(x, y, 0))
        } else {
            let s = 299 * u64::from(img.sample(x, y, 0))
                + 587 * u64::from(img.sample(x, y, 1))
                + 114 * u64::from(img.sample(x, y, 2));
            // round(s / 1000), ties up
            (2 * s + 1000) / 2000
        }
    };
    let mut cells = [0u64; 64];
    for cy in 0..8 {
        for cx in 0..8 {
            let mut sum = 0;
            for fy in cy * h..(cy + 1) * h {
                for fx in cx * w..(cx + 1) * w {
                    sum += luma(fx / 8, fy / 8);
                }
            }
            let n = (w * h) as u64;
            cells[cy * 8 + cx] = (2 * sum + n) / (2 * n);
        }
    }
    let total: u64 = cells.iter().sum();
    let mut out = [0u8; 8];
    for (k, &v) in cells.iter().enumerate() {
        if 64 * v >= total {
            out[k / 8] |= 0x80 >> (k % 8);
        }
    }
    out
}

fn criterion_2() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2);
    for i in 0..200 {
        let w = rng.gen_range(8..=64);
        let h = rng.gen_range(8..=64);
        let channels = if rng.gen() { 1 } else { 3 };
        // Every other image is nearly flat so cell means land on ties.
        let data: Vec<u8> = if i % 2 == 0 {
            (0..w * h * channels).map(|_| rng.gen()).collect()
        } else {
            let base: u8 = rng.gen_range(0..250);
            (0..w * h * channels).map(|_| base + rng.gen_range(0..3)).collect()
        };
        let img = ImageBuffer::new(w, h, channels, data).unwrap();
        let got = ahash(&img);
        let want = brute_force_ahash(&img);
        ensure(got.as_bytes() == want, || {
            format!("image {i} ({w}x{h}x{channels}): {} vs {}", got.to_hex(), hex_of(&want))
        })?;
    }
    Ok("200 images, exact".into())
}

fn hex_of(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

// 3

fn criterion_3() -> Verdict {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/pdq_ref");
    let text = std::fs::read_to_string(dir.join("vectors.tsv")).map_err(|e| e.to_string())?;
    let mut worst = 0;
    let mut n = 0;
    for line in text.lines() {
        let mut f = line.split('\t');
        let (file, want) = (f.next().unwrap(), f.next().unwrap());
        let want: PerceptualHash = want.parse().map_err(|e| format!("{file}: {e}"))?;
        let img = load_image_file(&dir.join(file))?;
        let d = hamming(&pdq(&img).hash, &want).unwrap().raw;
        ensure(d <= 2, || format!("{file}: {d} bits from reference"))?;
        worst = worst.max(d);
        n += 1;
    }
    ensure(n >= 10, || format!("only {n} reference images"))?;
    Ok(format!("{n} images, max distance {worst} bits"))
}

// 4

fn criterion_4() -> Verdict {
    for (i, img) in corpus(50).iter().enumerate() {
        let gray = apply_transform(img, &TransformSpec::Grayscale).unwrap();
        let d = hamming(&pdq(img).hash, &pdq(&gray).hash).unwrap().raw;
        ensure(d == 0, || format!("image {i}: grayscale moved {d} bits"))?;
    }
    for v in [0u8, 77, 255] {
        for (w, h) in [(64, 64), (100, 37), (8, 8)] {
            let r = pdq(&ImageBuffer::filled(w, h, v).unwrap());
            ensure(r.hash == PerceptualHash::zero(Algorithm::Pdq256) && r.quality == 0, || {
                format!("constant {v} at {w}x{h}: {} q{}", r.hash, r.quality)
            })?;
        }
    }
    Ok("50 grayscale pairs at δ=0; constant images hash to zero with quality 0".into())
}

// 5

fn criterion_5() -> Verdict {
    let images = corpus(50);
    let limit = 31.0 / 256.0;
    let mut report = Vec::new();
    let mut failures = Vec::new();
    let named: Vec<(&str, Transform)> = vec![
        (
            "resize½",
            Box::new(|img: &ImageBuffer| TransformSpec::Resize {
                width: img.width() / 2,
                height: img.height() / 2,
            }),
        ),
        ("brightness+10", Box::new(|_: &ImageBuffer| TransformSpec::BrightnessShift(10))),
        ("brightness-10", Box::new(|_: &ImageBuffer| TransformSpec::BrightnessShift(-10))),
        ("blur1", Box::new(|_: &ImageBuffer| TransformSpec::BoxBlur(1))),
    ];
    let originals: Vec<_> = images.iter().map(|i| pdq(i).hash).collect();
    for (name, spec) in &named {
        let mut deltas: Vec<f64> = images
            .iter()
            .zip(&originals)
            .map(|(img, h)| {
                let edited = apply_transform(img, &spec(img)).unwrap();
                hamming(h, &pdq(&edited).hash).unwrap().normalized()
            })
            .collect();
        deltas.sort_by(f64::total_cmp);
        let median = (deltas[24] + deltas[25]) / 2.0;
        report.push(format!("{name} median {:.1}/256", median * 256.0));
        if median > limit {
            failures.push(name.to_string());
        }
    }
    let summary = report.join(", ");
    ensure(failures.is_empty(), || format!("{summary}; above 31/256: {failures:?}"))?;
    Ok(summary)
}

// 6

fn criterion_6() -> Verdict {
    let mut rng = StdRng::seed_from_u64(6);
    for algo in [Algorithm::Ahash64, Algorithm::Pdq256] {
        for _ in 0..1000 {
            let h = random_hash(&mut rng, algo);
            let back = decode_grid(&encode_binary_grid(&h).unwrap(), algo).unwrap();
            ensure(back == h, || format!("{h} decoded as {back}"))?;
        }
    }
    Ok("2,000 hashes, exact".into())
}

// 7

fn criterion_7() -> Verdict {
    let g = Ristretto255;
    let mut rng = StdRng::seed_from_u64(7);
    for i in 0..1000 {
        let algo = if i % 2 == 0 { Algorithm::Pdq256 } else { Algorithm::Ahash64 };
        let h = random_hash(&mut rng, algo);
        let key = OprfKey::generate(&g, &mut rng);
        let r = g.random_scalar(&mut rng);
        let blinded = blind(&g, &h, &r).unwrap();
        let token = unblind_finalize(&g, &evaluate(&g, &blinded, &key), &r, &h).unwrap();
        ensure(token == direct_token(&g, &h, &key), || format!("instance {i} disagrees"))?;
    }
    Ok("1,000 instances, exact".into())
}

// 8

fn criterion_8() -> Verdict {
    let g = Ristretto255;
    let mut rng = StdRng::seed_from_u64(8);
    let mut total_y = 0;
    for i in 0..100 {
        let nx = rng.gen_range(1..=16);
        let ny = rng.gen_range(0..=10_000);
        let planted = rng.gen_range(0..=nx.min(ny));
        let y: Vec<_> = (0..ny).map(|_| random_hash(&mut rng, Algorithm::Pdq256)).collect();
        let mut x: Vec<_> = y.choose_multiple(&mut rng, planted).copied().collect();
        x.extend((planted..nx).map(|_| random_hash(&mut rng, Algorithm::Pdq256)));
        x.shuffle(&mut rng);
        let key = OprfKey::generate(&g, &mut rng);
        let set = ClientSet::new(&g, x.clone(), &mut rng).unwrap();
        let out = run_psi_local(&g, &set, &y, &key).unwrap();
        let ys: HashSet<_> = y.iter().collect();
        let oracle: Vec<_> = x.iter().filter(|h| ys.contains(h)).copied().collect();
        ensure(out.provider_output == oracle, || {
            format!("instance {i}: got {} matches, oracle {}", out.provider_output.len(), oracle.len())
        })?;
        ensure(out.client_set_size == nx, || format!("instance {i}: wrong set size"))?;
        total_y += ny;
    }
    Ok(format!("100 instances, {total_y} provider items in total"))
}

// 9

fn criterion_9() -> Verdict {
    let g = Ristretto255;
    let counted = Instrumented::new(Ristretto255);
    let mut rng = StdRng::seed_from_u64(9);
    let key = OprfKey::generate(&g, &mut rng);
    let x: Vec<_> = (0..16).map(|_| random_hash(&mut rng, Algorithm::Pdq256)).collect();
    let mut counts = Vec::new();
    let mut times = Vec::new();
    for ny in [5_000, 50_000] {
        let mut y: Vec<_> = (0..ny - 4).map(|_| random_hash(&mut rng, Algorithm::Pdq256)).collect();
        y.extend_from_slice(&x[..4]);
        let index = build_index(&g, Algorithm::Pdq256, &y, &key).unwrap();
        let mut best = Duration::MAX;
        for _ in 0..15 {
            let set = ClientSet::new(&counted, x.clone(), &mut rng).unwrap();
            let blinded = set.blinded(&counted).unwrap();
            // provider work, not counted
            let evaluated: Vec<_> = blinded.iter().map(|b| evaluate(&g, b, &key)).collect();
            counted.reset();
            let start = Instant::now();
            let blinded = set.blinded(&counted).unwrap();
            let tokens = set.finalize(&counted, &evaluated).unwrap();
            let hits = intersect(&tokens, &index);
            best = best.min(start.elapsed());
            std::hint::black_box(blinded);
            ensure(hits.len() == 4, || format!("|Y|={ny}: {} hits", hits.len()))?;
        }
        counts.push((counted.exponentiations(), counted.inversions()));
        times.push(best);
    }
    let nx = x.len() as u64;
    ensure(counts.iter().all(|&c| c == (2 * nx, nx)), || {
        format!("counts {counts:?}, expected ({}, {nx})", 2 * nx)
    })?;
    let ratio = times[1].as_secs_f64() / times[0].as_secs_f64();
    let detail = format!(
        "{} exps + {} inversions for |X|={nx} at both sizes; client time {:.2?} vs {:.2?} (ratio {ratio:.2})",
        counts[0].0, counts[0].1, times[0], times[1]
    );
    ensure(ratio < 2.0 && ratio > 0.5, || detail.clone())?;
    Ok(detail)
}

// 10

fn phg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phg"))
}

fn run_ok(cmd: &mut Command) -> Result<String, String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{cmd:?} exited {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Kills the child when dropped.
struct Proc(Child);

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn stdout_lines(out: ChildStdout) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(out).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

fn wait_for_line(rx: &mpsc::Receiver<String>, want: &str, limit: Duration) -> Result<(), String> {
    let deadline = Instant::now() + limit;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(line) if line == want => return Ok(()),
            Ok(_) => {}
            Err(_) => return Err(format!("no {want:?} within {limit:?}")),
        }
    }
}

fn serve(port: u16, data: &Path) -> Result<Proc, String> {
    let mut child = phg()
        .args(["serve", "--listen", &format!("127.0.0.1:{port}"), "--data-dir"])
        .arg(data)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let rx = stdout_lines(child.stdout.take().unwrap());
    let proc = Proc(child);
    rx.recv_timeout(Duration::from_secs(30))
        .map_err(|_| "coordinator did not start".to_owned())?;
    Ok(proc)
}

/// Forwards connections to `upstream`, recording every byte in both directions.
fn recording_proxy(upstream: String) -> (String, Arc<Mutex<Vec<u8>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let log = Arc::new(Mutex::new(Vec::new()));
    let record = log.clone();
    std::thread::spawn(move || {
        for inbound in listener.incoming() {
            let Ok(inbound) = inbound else { break };
            let Ok(outbound) = TcpStream::connect(&upstream) else {
                continue;
            };
            for (mut from, mut to) in [
                (inbound.try_clone().unwrap(), outbound.try_clone().unwrap()),
                (outbound, inbound),
            ] {
                let record = record.clone();
                std::thread::spawn(move || {
                    let mut buf = [0u8; 16 * 1024];
                    while let Ok(n) = from.read(&mut buf) {
                        if n == 0 {
                            break;
                        }
                        record.lock().unwrap().extend_from_slice(&buf[..n]);
                        if to.write_all(&buf[..n]).is_err() {
                            break;
                        }
                    }
                    let _ = to.shutdown(std::net::Shutdown::Write);
                });
            }
        }
    });
    (addr, log)
}

fn logged_hashes(log: &Path) -> Vec<String> {
    std::fs::read_to_string(log)
        .unwrap_or_default()
        .lines()
        .map(|l| l.split('\t').next().unwrap_or_default().to_owned())
        .collect()
}

fn wait_for_log(log: &Path, lines: usize, limit: Duration) -> Result<Vec<String>, String> {
    let deadline = Instant::now() + limit;
    loop {
        let got = logged_hashes(log);
        if got.len() >= lines {
            // allow stray extra lines to show up before comparing
            std::thread::sleep(Duration::from_millis(200));
            return Ok(logged_hashes(log));
        }
        if Instant::now() > deadline {
            return Err(format!("match log has {} lines, expected {lines}", got.len()));
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn report(addr: &str, algo: &str, files: &[PathBuf]) -> Result<(u32, usize), String> {
    let out = run_ok(phg().args(["report", "--connect", addr, "--algo", algo]).args(files))?;
    let field = |name: &str| -> Option<String> {
        out.lines()
            .find_map(|l| l.strip_prefix(name).and_then(|v| v.strip_prefix('\t')).map(str::to_owned))
    };
    let contacted = field("providers_contacted").and_then(|v| v.parse().ok());
    let sent = field("tokens_sent").and_then(|v| v.parse().ok());
    contacted.zip(sent).ok_or_else(|| format!("unexpected receipt {out:?}"))
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut rng = StdRng::seed_from_u64(10);

    // Client content and its hashes (the plaintext oracle side).
    let mut files = Vec::new();
    let mut x = Vec::new();
    for i in 0..16 {
        let img = synthetic_image(5000 + i);
        let path = dir.join(format!("client_{i:02}.ppm"));
        std::fs::write(&path, encode_pnm(&img)).map_err(|e| e.to_string())?;
        x.push(pdq(&img).hash);
        files.push(path);
    }
    let planted: BTreeSet<String> = x[..5].iter().map(|h| h.to_string()).collect();

    // Provider corpus: 50,000 hashes, 5 of them the client's.
    let mut y: Vec<PerceptualHash> = (0..49_995).map(|_| random_hash(&mut rng, Algorithm::Pdq256)).collect();
    y.extend_from_slice(&x[..5]);
    y.shuffle(&mut rng);
    let ys: HashSet<_> = y.iter().collect();
    let oracle: BTreeSet<String> = x.iter().filter(|h| ys.contains(h)).map(|h| h.to_string()).collect();
    ensure(oracle == planted, || "random corpus collided with client content".into())?;
    let hash_list: String = y.iter().map(|h| format!("{h}\n")).collect();
    std::fs::write(dir.join("y.txt"), hash_list).map_err(|e| e.to_string())?;

    let key = dir.join("k.bin");
    let (index, map, log, data) = (dir.join("y.phix"), dir.join("map.tsv"), dir.join("matches.log"), dir.join("data"));
    run_ok(phg().args(["ingest", "--gen-key", "--key-file"]).arg(&key))?;
    run_ok(
        phg()
            .args(["ingest", "--hashes"])
            .arg(dir.join("y.txt"))
            .arg("--key-file")
            .arg(&key)
            .arg("--out")
            .arg(&index)
            .arg("--map-out")
            .arg(&map),
    )?;

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let coord_addr = format!("127.0.0.1:{port}");
    let coordinator = serve(port, &data)?;
    let (proxy, transcript) = recording_proxy(coord_addr.clone());

    let mut provider_child = phg()
        .args(["provider", "--connect", &coord_addr, "--id", "p1", "--key-file"])
        .arg(&key)
        .arg("--index")
        .arg(&index)
        .arg("--map")
        .arg(&map)
        .arg("--log")
        .arg(&log)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let events = stdout_lines(provider_child.stdout.take().unwrap());
    let _provider = Proc(provider_child);
    wait_for_line(&events, "index_uploaded\t50000", Duration::from_secs(60))?;

    let receipt = report(&proxy, "pdq", &files)?;
    ensure(receipt == (1, 16), || format!("receipt {receipt:?}"))?;
    let first: BTreeSet<String> = wait_for_log(&log, 5, Duration::from_secs(20))?.into_iter().collect();
    ensure(logged_hashes(&log).len() == 5 && first == oracle, || {
        format!("match log {first:?} != planted {oracle:?}")
    })?;

    let wire = transcript.lock().unwrap().clone();
    ensure(wire.windows(15).any(|w| w == b"\"report_tokens\""), || "transcript is empty".into())?;
    let text = String::from_utf8_lossy(&wire);
    for h in &x {
        ensure(!text.contains(&h.to_hex()), || format!("raw hash {h} on the wire"))?;
    }

    // Restart the coordinator from its persisted index.
    let persisted = std::fs::read(data.join("p1.phix")).map_err(|e| e.to_string())?;
    ensure(persisted == std::fs::read(&index).unwrap(), || "persisted index differs from ingest output".into())?;
    drop(coordinator);
    let coordinator = serve(port, &data)?;
    ensure(std::fs::read(data.join("p1.phix")).unwrap() == persisted, || "index changed on restart".into())?;
    wait_for_line(&events, "index_uploaded\t50000", Duration::from_secs(60))?;
    let receipt = report(&coord_addr, "pdq", &files)?;
    ensure(receipt == (1, 16), || format!("receipt after restart {receipt:?}"))?;
    let all = wait_for_log(&log, 10, Duration::from_secs(20))?;
    let second: BTreeSet<String> = all[5..].iter().cloned().collect();
    ensure(all.len() == 10 && second == oracle, || format!("after restart logged {second:?}"))?;
    ensure(std::fs::read(data.join("p1.phix")).unwrap() == persisted, || "re-upload changed the index bytes".into())?;
    drop(coordinator);
    Ok("5/5 planted hashes logged before and after restart; no client hash on the wire".into())
}

// 11

/// `round(100 * num / den)` as two-decimal text, ties up.
fn cents_text(num: u64, den: u64) -> String {
    let cents = (200 * 100 * num + den) / (2 * den);
    format!("{}.{:02}", cents / 100, cents % 100)
}

fn criterion_11() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    // 8x8 two-tone base; aHash bits are exactly its white pixels.
    let base: Vec<u8> = (0..64).map(|i| if (i * 37 + i / 8) % 64 < 32 { 255 } else { 0 }).collect();
    let flip = |n: usize| -> Vec<u8> {
        let mut v = base.clone();
        for p in v.iter_mut().take(n) {
            *p = 255 - *p;
        }
        v
    };
    let images: [(&str, Vec<u8>); 5] = [
        ("a.pgm", base.clone()),
        ("f1.pgm", flip(1)),
        ("f2.pgm", flip(2)),
        ("f4.pgm", flip(4)),
        ("inv.pgm", flip(64)),
    ];
    for (name, data) in &images {
        let img = ImageBuffer::luma(8, 8, data.clone()).unwrap();
        std::fs::write(dir.join(name), encode_pnm(&img)).map_err(|e| e.to_string())?;
    }
    let pairs = [
        ("same", "a.pgm", "a.pgm"),
        ("edit", "a.pgm", "f1.pgm"),
        ("edit", "a.pgm", "f4.pgm"),
        ("far", "a.pgm", "inv.pgm"),
        ("far", "a.pgm", "f2.pgm"),
    ];
    let manifest: String = pairs.iter().map(|(l, a, b)| format!("{l},{a},{b}\n")).collect();
    std::fs::write(dir.join("pairs.csv"), manifest).map_err(|e| e.to_string())?;
    let out = dir.join("out");
    run_ok(
        phg()
            .args(["eval", "--metrics", "ahash,pdq", "--bins", "10", "--manifest"])
            .arg(dir.join("pairs.csv"))
            .arg("--out")
            .arg(&out),
    )?;
    let table = std::fs::read_to_string(out.join("table.csv")).map_err(|e| e.to_string())?;

    // Hand-computed aHash cells: distances 0 | 1,4 | 64,2 bits of 64.
    let hand = [
        ("edit", ["96.09", "98.44"]),
        ("far", ["48.44", "96.88"]),
        ("same", ["100.00", "100.00"]),
    ];
    // PDQ cells from an independent distance loop, in exact integer arithmetic.
    let load = |name: &str| load_image_file(&dir.join(name)).unwrap();
    let mut expected = vec!["label,ahash64_mean,ahash64_max,pdq256_mean,pdq256_max,avg_mean,avg_max".to_owned()];
    for (label, ahash_cells) in hand {
        let mut sums = [0u64; 2];
        let mut best = [0u64; 2];
        let mut n = 0;
        for (_, a, b) in pairs.iter().filter(|p| p.0 == label) {
            for (k, algo) in [Algorithm::Ahash64, Algorithm::Pdq256].into_iter().enumerate() {
                let bits = algo.bits() as u64;
                let same = bits - u64::from(per_bit_distance(&algo.hash(&load(a)), &algo.hash(&load(b))));
                sums[k] += same;
                best[k] = best[k].max(same);
            }
            n += 1;
        }
        ensure(cents_text(sums[0], 64 * n) == ahash_cells[0], || format!("{label}: hand value mismatch"))?;
        ensure(cents_text(best[0], 64) == ahash_cells[1], || format!("{label}: hand max mismatch"))?;
        // averages: (s_a / 64n + s_p / 256n) / 2 = (4 s_a + s_p) / 512n
        expected.push(format!(
            "{label},{},{},{},{},{},{}",
            ahash_cells[0],
            ahash_cells[1],
            cents_text(sums[1], 256 * n),
            cents_text(best[1], 256),
            cents_text(4 * sums[0] + sums[1], 512 * n),
            cents_text(4 * best[0] + best[1], 512),
        ));
    }
    let got: Vec<&str> = table.lines().collect();
    ensure(got == expected, || format!("table.csv:\n{table}\nexpected:\n{}", expected.join("\n")))?;

    for metric in ["ahash64", "pdq256"] {
        let hist = std::fs::read_to_string(out.join(format!("histogram_{metric}.csv"))).map_err(|e| e.to_string())?;
        let total: usize = hist
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        ensure(total == pairs.len(), || format!("{metric} histogram holds {total} scores"))?;
    }
    Ok("table.csv matches the oracle cell for cell; histograms sum to 5".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "distance oracle", Some(Duration::from_secs(1)), criterion_1),
        (2, "aHash brute force", Some(Duration::from_secs(5)), criterion_2),
        (3, "PDQ reference vectors", Some(Duration::from_secs(10)), criterion_3),
        (4, "PDQ invariances", Some(Duration::from_secs(5)), criterion_4),
        (5, "robustness", Some(Duration::from_secs(60)), criterion_5),
        (6, "grid roundtrip", Some(Duration::from_secs(1)), criterion_6),
        (7, "OPRF algebra", Some(Duration::from_secs(10)), criterion_7),
        (8, "PSI correctness", Some(Duration::from_secs(60)), criterion_8),
        (9, "unbalanced client cost", None, criterion_9),
        (10, "end-to-end service", Some(Duration::from_secs(120)), criterion_10),
        (11, "evaluation harness", Some(Duration::from_secs(5)), criterion_11),
    ];
    let mut failed = 0;
    for (n, name, limit, run) in criteria {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let verdict = verdict.and_then(|d| match limit {
            Some(l) if took > l => Err(format!("{d}; took {took:.2?}, limit {l:?}")),
            _ => Ok(d),
        });
        match verdict {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{took:.2?}]"),
            Err(e) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {e} [{took:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 11 criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
