//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use meshprobe_core::geometry::{wall_crossings, FloorPlan, Material, Point2D, Rect, Wall};
use meshprobe_core::live::{run_client, spawn_device};
use meshprobe_core::radio::worst_link;
use meshprobe_core::sim::{run_session_captured, PreparedPath};
use meshprobe_core::topology::{best_path, MeshGraph, MeshNode, NodeId, NodeRole};
use meshprobe_core::{
    decode, encode, packet_delivery_ratio, pooled_mean, run_session, summarize, AccelReading, FormationVerdict,
    LinkQuality, ProbeOutcome, ProbeRecord, ProtocolParams, Scenario, SessionRecord,
};

type Check = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn shipped(name: &str) -> Scenario {
    Scenario::load(root().join("scenarios").join(format!("{name}.json"))).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let took = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {:.2} s, limit {:.0} s", took.as_secs_f64(), l.as_secs_f64())),
            (r, _) => r,
        };
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {id:>2} {name}: {detail} ({:.2} s)", took.as_secs_f64());
    }
}

fn budget_arithmetic() -> Check {
    let mut lines = Vec::new();
    for name in ["config1", "config2", "config3"] {
        let b = shipped(name).budget();
        ensure(b.router_count == 4, || format!("{name}: {} routers", b.router_count))?;
        ensure(within(b.serial_tx, 4.583, 0.001), || format!("{name}: serial {}", b.serial_tx))?;
        ensure(b.device_loop == 50.0 && b.wifi_module == 19.0 && b.mesh_routers == 8.0, || {
            format!("{name}: loop {} module {} mesh {}", b.device_loop, b.wifi_module, b.mesh_routers)
        })?;
        ensure(within(b.total, 81.58, 0.01), || format!("{name}: total {}", b.total))?;
        lines.push(format!("{name} {:.2} ms", b.total));
    }
    Ok(format!("serial 4.583 + 50 + 19 + 8; {}", lines.join(", ")))
}

fn pdr_arithmetic() -> Check {
    for (rec, want) in [(100, 1.00), (88, 0.88), (84, 0.84), (83, 0.83)] {
        let got = packet_delivery_ratio(100, rec).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("(100, {rec}) gave {got}, want {want}"))?;
    }
    Ok("(100,100)=1.00 (100,88)=0.88 (100,84)=0.84 (100,83)=0.83 exactly".into())
}

fn codec() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let mut f = || rng.gen_range(0..=1023u16);
        let r = AccelReading::new(f(), f(), f(), f());
        let frame = encode(&r).map_err(|e| e.to_string())?;
        let want = format!("*{:04} {:04} {:04} {:04} \n", r.acc_ax, r.acc_ay, r.acc_bx, r.acc_by);
        ensure(frame.as_bytes() == want.as_bytes(), || format!("{r:?} encoded as {:?}", frame.as_bytes()))?;
        ensure(decode(frame.as_bytes()) == Ok(r), || format!("{r:?} did not round-trip"))?;
    }
    let good = *encode(&AccelReading::new(512, 300, 7, 64)).unwrap().as_bytes();
    for i in 0..good.len() {
        let mut bad = good;
        bad[i] = b'x';
        let e = decode(&bad).err().ok_or_else(|| format!("corruption at {i} accepted"))?;
        ensure(e.offset == i, || format!("corruption at {i} reported at {}", e.offset))?;
    }
    Ok("10000 round-trips, 22-byte template, 22/22 corrupt offsets reported".into())
}

fn link_model() -> Check {
    let targets = [("config1", 40.0, 20.0), ("config2", 55.0, 42.0), ("config3", 67.0, 56.0)];
    let mut parts = Vec::new();
    for (name, att, snr) in targets {
        let s = shipped(name);
        let (a, n) = worst_link(&s.chain_links(), &s.radio);
        ensure(within(a, att, 5.0) && within(n, snr, 5.0), || {
            format!("{name}: worst link {a:.2}/{n:.2} dB vs {att}/{snr}")
        })?;
        parts.push(format!("{name} {a:.2}/{n:.2} vs {att}/{snr}"));
    }
    Ok(parts.join(", "))
}

fn random_graph_oracle() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut routed = 0;
    for case in 0..200 {
        let n = rng.gen_range(2..=6u32);
        let nodes: Vec<MeshNode> = (1..=n)
            .map(|id| MeshNode {
                id,
                position: Point2D::new(f64::from(id), 0.0),
                role: if id == n {
                    NodeRole::Gateway
                } else if id == 1 {
                    NodeRole::DeviceSide
                } else {
                    NodeRole::Relay
                },
            })
            .collect();
        let mut usable = Vec::new();
        let mut links = Vec::new();
        for a in 1..=n {
            for b in a + 1..=n {
                if rng.gen_bool(0.55) {
                    let att = f64::from(rng.gen_range(0..=80u32));
                    let q = LinkQuality::from_metrics(1.0, 0, att, 20.0);
                    if q.usable {
                        usable.push((a, b, att));
                    }
                    links.push((a, b, q));
                }
            }
        }
        let g = MeshGraph::from_links(nodes, links).map_err(|e| e.to_string())?;
        let (src, dst) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
        let want = exhaustive(n, &usable, src, dst);
        match (best_path(&g, src, dst).ok(), want) {
            (Some(r), Some((c, hops))) if r.hops == hops && r.total_cost == c => routed += 1,
            (None, None) => {}
            (got, want) => return Err(format!("case {case}: {got:?} vs {want:?}")),
        }
    }
    Ok(routed)
}

fn exhaustive(n: u32, edges: &[(NodeId, NodeId, f64)], src: NodeId, dst: NodeId) -> Option<(f64, Vec<NodeId>)> {
    let w = |a: NodeId, b: NodeId| edges.iter().find(|e| (e.0, e.1) == (a.min(b), a.max(b))).map(|e| e.2);
    let mut best: Option<(f64, Vec<NodeId>)> = None;
    let mut stack = vec![(vec![src], 0.0)];
    while let Some((path, c)) = stack.pop() {
        let last = *path.last().unwrap();
        if last == dst {
            if best.as_ref().is_none_or(|(bc, bp)| (c, path.len(), &path) < (*bc, bp.len(), bp)) {
                best = Some((c, path));
            }
            continue;
        }
        for v in (1..=n).filter(|v| !path.contains(v)) {
            if let Some(x) = w(last, v) {
                let mut p = path.clone();
                p.push(v);
                stack.push((p, c + x));
            }
        }
    }
    best
}

fn topology() -> Check {
    let route = shipped("config1").diagnose().route.ok_or("config1 did not form")?;
    ensure(route.hops == [1, 2, 3, 4], || format!("config1 route {:?}", route.hops))?;
    let r = shipped("config4").diagnose();
    ensure(r.verdict == FormationVerdict::Partial, || format!("config4 verdict {:?}", r.verdict))?;
    let best = r.neighbors.iter().find(|n| n.node == 1).and_then(|n| n.best_neighbor);
    ensure(best == Some(3), || format!("config4 router 1 best neighbor {best:?}"))?;
    let routed = random_graph_oracle()?;
    Ok(format!(
        "config1 chain 1-2-3-4; config4 partial, router 1 -> 3; 200/200 random graphs agree ({routed} routed)"
    ))
}

fn session_stats(s: &Scenario, seed: u64) -> (f64, f64) {
    let st = summarize(&run_session(s, 1000, seed).unwrap()).unwrap();
    (st.mean_pd.unwrap_or(0.0), st.pdr)
}

fn simulation_calibration() -> Check {
    let targets = [("config1", 244.33, 1.00), ("config2", 485.58, 0.88), ("config3", 706.6, 0.835)];
    let mut parts = Vec::new();
    for (name, pd, pdr) in targets {
        let s = shipped(name);
        let mut worst = (0.0f64, 0.0f64);
        for seed in 1..=5 {
            let (got_pd, got_pdr) = session_stats(&s, seed);
            ensure(within(got_pd, pd, 0.10 * pd), || format!("{name} seed {seed}: PD {got_pd:.2} vs {pd}"))?;
            ensure(within(got_pdr, pdr, 0.03), || format!("{name} seed {seed}: PDR {got_pdr:.3} vs {pdr}"))?;
            worst.0 = worst.0.max((got_pd - pd).abs() / pd);
            worst.1 = worst.1.max((got_pdr - pdr).abs());
        }
        parts.push(format!("{name} |dPD| <= {:.1}% |dPDR| <= {:.1} pp", 100.0 * worst.0, 100.0 * worst.1));
    }
    Ok(format!("seeds 1-5, 1000 requests: {}", parts.join(", ")))
}

fn ordering() -> Check {
    let configs = [shipped("config1"), shipped("config2"), shipped("config3")];
    let mut min_gap = (f64::INFINITY, f64::INFINITY);
    for seed in 1..=20 {
        let r: Vec<(f64, f64)> = configs.iter().map(|s| session_stats(s, seed)).collect();
        for k in 0..2 {
            ensure(r[k].0 < r[k + 1].0, || format!("seed {seed}: PD {:.2} !< {:.2}", r[k].0, r[k + 1].0))?;
            ensure(r[k].1 > r[k + 1].1, || format!("seed {seed}: PDR {:.3} !> {:.3}", r[k].1, r[k + 1].1))?;
            min_gap.0 = min_gap.0.min(r[k + 1].0 - r[k].0);
            min_gap.1 = min_gap.1.min(r[k].1 - r[k + 1].1);
        }
    }
    Ok(format!(
        "20 seeds strictly ordered; smallest PD step {:.1} ms, smallest PDR step {:.1} pp",
        min_gap.0,
        100.0 * min_gap.1
    ))
}

fn determinism() -> Check {
    // Fingerprints of the 500-probe, seed-99 sessions. Any platform with
    // IEEE-754 doubles must reproduce them.
    let golden = [
        ("config1", 0x951b_dfae_8187_ea3c_u64),
        ("config2", 0x2ac5_f279_31f4_6301),
        ("config3", 0x5613_c1c2_1297_1706),
    ];
    let mut digests = Vec::new();
    for (name, want) in golden {
        let s = shipped(name);
        let a = run_session(&s, 500, 99).unwrap().to_json();
        let b = run_session(&s, 500, 99).unwrap().to_json();
        ensure(a == b, || format!("{name}: runs differ"))?;
        // FNV-1a over the JSON bytes, so the line shows a stable fingerprint.
        let h = a.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
        ensure(h == want, || format!("{name}: fingerprint {h:016x}, pinned {want:016x}"))?;
        digests.push(format!("{name} {h:016x}"));
    }
    Ok(format!("identical JSON across runs, pinned fingerprints match: {}", digests.join(", ")))
}

fn floor_of_delay() -> Check {
    let mut checked = 0;
    for name in ["config1", "config2", "config3"] {
        let s = shipped(name);
        let floor = PreparedPath::from_scenario(&s).map_err(|e| e.to_string())?.floor.min_propagation_delay();
        for seed in 0..10 {
            let rec = run_session(&s, 200, seed).unwrap();
            for p in rec.probes.iter().filter(|p| p.outcome == ProbeOutcome::Delivered) {
                let pd = (p.rx_ms.unwrap() - p.tx_ms) / 2.0;
                ensure(pd >= floor - 1e-9, || format!("{name} seed {seed} probe {}: {pd} < {floor}", p.seq))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} delivered probes over 10 seeds x 3 scenarios, none below 29.29 ms"))
}

fn statistics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..100 {
        let n = rng.gen_range(2..300);
        let mut t = 0.0;
        let probes: Vec<ProbeRecord> = (0..n)
            .map(|seq| {
                let tx = t;
                let rx = (!rng.gen_bool(0.2)).then(|| tx + rng.gen_range(60.0..1800.0));
                t = rx.unwrap_or(tx + 2000.0);
                ProbeRecord {
                    seq,
                    tx_ms: tx,
                    rx_ms: rx,
                    outcome: if rx.is_some() { ProbeOutcome::Delivered } else { ProbeOutcome::TimedOut },
                }
            })
            .collect();
        let rec = SessionRecord::new("oracle", 0, probes);
        let st = summarize(&rec).map_err(|e| e.to_string())?;
        let pds: Vec<f64> = rec.probes.iter().filter_map(|p| p.rx_ms.map(|rx| (rx - p.tx_ms) / 2.0)).collect();
        if pds.len() < 2 {
            continue;
        }
        let m = pds.iter().sum::<f64>() / pds.len() as f64;
        let sd = (pds.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (pds.len() - 1) as f64).sqrt();
        let (gm, gs) = (st.mean_pd.unwrap(), st.stddev_pd.unwrap());
        ensure(within(gm, m, 1e-9) && within(gs, sd, 1e-9), || format!("case {case}: {gm}/{gs} vs {m}/{sd}"))?;
        let grand = st.datasets.iter().map(|d| d.mean_pd * d.count as f64).sum::<f64>() / pds.len() as f64;
        ensure(within(grand, gm, 1e-9), || format!("case {case}: grand mean {grand} vs {gm}"))?;
    }
    let pooled = pooled_mean(&[748.69, 664.5]).unwrap();
    ensure(within(pooled, 706.6, 0.005), || format!("pooled {pooled}"))?;
    Ok(format!("100 sessions within 1e-9 ms; data-set grand mean = mean; pooled (748.69, 664.5) = {pooled:.3} ms"))
}

fn shape(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), shape(v))).collect()),
        Value::Array(a) => Value::Array(a.iter().take(1).map(shape).collect()),
        Value::Number(_) => Value::String("number".into()),
        Value::String(_) => Value::String("string".into()),
        other => other.clone(),
    }
}

fn live_mode() -> Check {
    let params = ProtocolParams::default();
    let (addr, device) = spawn_device("127.0.0.1:0", params, Some(1)).map_err(|e| e.to_string())?;
    let (live, live_wire) = run_client(&addr.to_string(), &params, 100).map_err(|e| e.to_string())?;
    device.join().map_err(|_| "device thread panicked")?.map_err(|e| e.to_string())?;
    let st = summarize(&live).map_err(|e| e.to_string())?;
    ensure(st.pdr == 1.0, || format!("live PDR {}", st.pdr))?;

    let (sim, sim_wire) = run_session_captured(&shipped("config1"), 100, 1).map_err(|e| e.to_string())?;
    ensure(live_wire.sent == sim_wire.sent, || "start bytes differ".into())?;
    ensure(live_wire.received == sim_wire.received, || "received frames differ".into())?;

    let schema_path = root().join("docs/schemas/session.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(schema_path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let compiled = jsonschema::JSONSchema::compile(&schema).map_err(|e| e.to_string())?;
    let (lv, sv): (Value, Value) = (
        serde_json::from_str(&live.to_json()).unwrap(),
        serde_json::from_str(&sim.to_json()).unwrap(),
    );
    ensure(compiled.is_valid(&lv) && compiled.is_valid(&sv), || "session schema violation".into())?;
    ensure(shape(&lv) == shape(&sv), || "record shapes differ".into())?;
    Ok(format!(
        "100/100 delivered over loopback, mean PD {:.3} ms; {} sent and {} received bytes identical to simulation; schema identical",
        st.mean_pd.unwrap_or(0.0),
        live_wire.sent.len(),
        live_wire.received.len()
    ))
}

/// Number of walls whose line changes side between consecutive 1 cm samples
/// at a point on the wall.
fn sampled_crossings(p: Point2D, q: Point2D, walls: &[Wall]) -> usize {
    let side = |a: Point2D, b: Point2D, r: Point2D| (b.x - a.x) * (r.y - a.y) - (b.y - a.y) * (r.x - a.x);
    let n = (p.distance_to(q) / 0.01).ceil() as usize;
    let at = |i: usize| {
        let t = i as f64 / n as f64;
        Point2D::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
    };
    walls
        .iter()
        .filter(|w| {
            (1..=n).any(|i| {
                let (r0, r1) = (at(i - 1), at(i));
                side(w.a, w.b, r0).signum() != side(w.a, w.b, r1).signum()
                    && seg_dist(Point2D::new((r0.x + r1.x) / 2.0, (r0.y + r1.y) / 2.0), w.a, w.b) < 0.01
            })
        })
        .count()
}

fn seg_dist(r: Point2D, a: Point2D, b: Point2D) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let t = (((r.x - a.x) * dx + (r.y - a.y) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (r.x - a.x - t * dx).hypot(r.y - a.y - t * dy)
}

fn geometry_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let extent = Rect {
        min: Point2D::new(0.0, 0.0),
        max: Point2D::new(40.0, 40.0),
    };
    let pt = |rng: &mut ChaCha8Rng| Point2D::new(rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0));
    let (mut cases, mut hits) = (0, 0);
    while cases < 50 {
        let walls: Vec<Wall> = (0..rng.gen_range(1..8))
            .map(|_| {
                let (a, b) = (pt(&mut rng), pt(&mut rng));
                Wall::new(a, b, Material::ReinforcedConcrete, 0.3, None).unwrap()
            })
            .collect();
        let (p, q) = (pt(&mut rng), pt(&mut rng));
        // Skip cases 1 cm sampling cannot decide: ends near a wall or
        // near-parallel pairs.
        let ambiguous = walls.iter().any(|w| {
            let (ux, uy, vx, vy) = (q.x - p.x, q.y - p.y, w.b.x - w.a.x, w.b.y - w.a.y);
            let sin = (ux * vy - uy * vx).abs() / (ux.hypot(uy) * vx.hypot(vy));
            [seg_dist(p, w.a, w.b), seg_dist(q, w.a, w.b), seg_dist(w.a, p, q), seg_dist(w.b, p, q)]
                .iter()
                .any(|&d| d < 0.05)
                || sin < 0.02
        });
        if p.distance_to(q) < 1.0 || ambiguous {
            continue;
        }
        let plan = FloorPlan::new(extent, walls.clone(), vec![]).map_err(|e| e.to_string())?;
        let fast = wall_crossings(p, q, &plan).map_err(|e| e.to_string())?.len();
        let slow = sampled_crossings(p, q, &walls);
        ensure(fast == slow, || format!("case {cases}: {fast} vs sampled {slow}"))?;
        hits += fast;
        cases += 1;
    }
    Ok(format!("50 randomized cases agree with 1 cm sampling ({hits} crossings)"))
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    let secs = |s| Some(Duration::from_secs(s));
    let mut suite = Suite { failed: 0 };
    suite.run(1, "budget arithmetic", secs(1), budget_arithmetic);
    suite.run(2, "PDR arithmetic", None, pdr_arithmetic);
    suite.run(3, "codec", secs(1), codec);
    suite.run(4, "calibrated link model", None, link_model);
    suite.run(5, "topology", secs(5), topology);
    suite.run(6, "simulation calibration", secs(30), simulation_calibration);
    suite.run(7, "ordering property", None, ordering);
    suite.run(8, "determinism", None, determinism);
    suite.run(9, "floor of delay", None, floor_of_delay);
    suite.run(10, "statistics oracle", None, statistics_oracle);
    suite.run(11, "live mode", secs(15), live_mode);
    suite.run(12, "geometry oracle", None, geometry_oracle);
    let _ = panic::take_hook();
    println!("{} of 12 criteria passed", 12 - suite.failed);
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
