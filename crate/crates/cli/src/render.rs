//! JSON report shapes and plain-text tables.

use std::fmt::Write;

use serde::Serialize;

use meshprobe_core::measurement::SessionStats;
use meshprobe_core::topology::Edge;
use meshprobe_core::{
    Calibration, Coverage, DelayBudget, FormationReport, FormationVerdict, LinkGrade, ProbeOutcome, Scenario,
    SessionRecord,
};

use crate::SessionFitReport;

pub fn verdict(v: FormationVerdict) -> &'static str {
    match v {
        FormationVerdict::Formed => "formed",
        FormationVerdict::Partial => "partial",
        FormationVerdict::Failed => "failed",
    }
}

fn grade(g: LinkGrade) -> &'static str {
    match g {
        LinkGrade::Good => "good",
        LinkGrade::Weak => "weak",
        LinkGrade::Dead => "dead",
    }
}

#[derive(Serialize)]
pub struct BudgetReport<'a> {
    pub scenario: &'a str,
    pub budget: &'a DelayBudget,
}

pub fn budget_table(name: &str, b: &DelayBudget) -> String {
    let mut s = format!("delay budget: {name} ({} routers)\n", b.router_count);
    for (label, ms) in &b.breakdown {
        let _ = writeln!(s, "  {label:<34} {ms:>8.3} ms");
    }
    let _ = writeln!(s, "  {:<34} {:>8.2} ms", "total", b.total);
    s.push_str("  (mesh term counts routers, not hops)\n");
    s
}

#[derive(Serialize)]
pub struct TopologyReport {
    pub scenario: String,
    pub verdict: FormationVerdict,
    pub edges: Vec<Edge>,
    pub formation: FormationReport,
    pub coverage: Coverage,
}

impl TopologyReport {
    pub fn new(s: &Scenario) -> Self {
        let graph = s.graph();
        let formation = meshprobe_core::diagnose(&graph);
        Self {
            scenario: s.name.clone(),
            verdict: formation.verdict,
            edges: graph.edges().collect(),
            formation,
            coverage: s.coverage(),
        }
    }
}

fn edge_line(s: &mut String, e: &Edge) {
    let q = &e.quality;
    let _ = writeln!(
        s,
        "  {:>3} - {:<3} {:>7.2} m {:>2} walls {:>7.2} dB snr {:>6.2} dB  {}",
        e.a,
        e.b,
        q.distance,
        q.walls_crossed,
        q.attenuation,
        q.snr_metric,
        grade(q.grade)
    );
}

pub fn formation_table(r: &FormationReport) -> String {
    let mut s = format!("verdict: {}\n", verdict(r.verdict));
    let comps: Vec<String> = r
        .components
        .iter()
        .map(|c| format!("{{{}}}", c.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")))
        .collect();
    let _ = writeln!(s, "components: {}", comps.join(" "));
    for n in &r.neighbors {
        let best = n.best_neighbor.map_or("-".to_string(), |b| b.to_string());
        let _ = writeln!(
            s,
            "  router {:>3}: best neighbor {:>3}{}",
            n.node,
            best,
            if n.reaches_gateway { "" } else { "  (no route to gateway)" }
        );
    }
    if !r.unusable_pairs.is_empty() {
        s.push_str("unusable pairs:\n");
        for e in &r.unusable_pairs {
            edge_line(&mut s, e);
        }
    }
    s
}

pub fn topology_table(r: &TopologyReport) -> String {
    let mut s = format!("topology: {}\nusable links:\n", r.scenario);
    for e in &r.edges {
        edge_line(&mut s, e);
    }
    s.push_str(&formation_table(&r.formation));
    match &r.formation.route {
        Some(route) => {
            let hops: Vec<String> = route.hops.iter().map(u32::to_string).collect();
            let _ = writeln!(s, "route: {} (cost {:.2} dB)", hops.join(" -> "), route.total_cost);
        }
        None => s.push_str("route: none\n"),
    }
    let c = &r.coverage;
    let per: Vec<String> = c.per_link.iter().map(|d| format!("{d:.2}")).collect();
    let _ = writeln!(
        s,
        "coverage: linear {:.2} m, direct {:.2} m [{}]",
        c.linear,
        c.direct,
        per.join(", ")
    );
    s
}

pub fn session_table(rec: &SessionRecord) -> String {
    let mut s = format!("session {} seed {}\n", rec.scenario, rec.seed);
    let _ = writeln!(s, "{:>6} {:>12} {:>12} {:>10}  outcome", "seq", "tx_ms", "rx_ms", "pd_ms");
    for p in &rec.probes {
        let (rx, pd) = match p.rx_ms {
            Some(rx) => (format!("{rx:.3}"), format!("{:.3}", (rx - p.tx_ms) / 2.0)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(s, "{:>6} {:>12.3} {:>12} {:>10}  {}", p.seq, p.tx_ms, rx, pd, p.outcome.as_str());
    }
    let undelivered = rec.probes.iter().filter(|p| p.outcome != ProbeOutcome::Delivered).count();
    let _ = writeln!(
        s,
        "requested {} received {} undelivered {}",
        rec.request_count, rec.received_count, undelivered
    );
    s
}

#[derive(Serialize)]
pub struct StatsReport<'a> {
    pub scenario: &'a str,
    pub seed: u64,
    #[serde(flatten)]
    pub stats: &'a SessionStats,
}

fn opt_ms(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.3} ms"))
}

pub fn stats_table(name: &str, st: &SessionStats) -> String {
    let mut s = format!("session report: {name}\n");
    let _ = writeln!(s, "  requested        {}", st.n_requested);
    let _ = writeln!(s, "  delivered        {}", st.n_delivered);
    let _ = writeln!(s, "  pdr              {:.4}", st.pdr);
    let _ = writeln!(s, "  mean pd          {}", opt_ms(st.mean_pd));
    let _ = writeln!(s, "  stddev pd        {}", opt_ms(st.stddev_pd));
    let _ = writeln!(s, "  min pd           {}", opt_ms(st.min_pd));
    let _ = writeln!(s, "  max pd           {}", opt_ms(st.max_pd));
    s.push_str("  data sets (10 delivered strings each):\n");
    for d in &st.datasets {
        let _ = writeln!(
            s,
            "    {:>4} {:>10.3} ms{}",
            d.index,
            d.mean_pd,
            if d.partial { format!("  (partial, {})", d.count) } else { String::new() }
        );
    }
    s
}

/// One row per data set, for external plotting.
pub fn datasets_csv(st: &SessionStats) -> String {
    let mut s = String::from("index,count,mean_pd_ms,partial\n");
    for d in &st.datasets {
        let _ = writeln!(s, "{},{},{:?},{}", d.index, d.count, d.mean_pd, d.partial);
    }
    s
}

pub fn calibration_table(cal: &Calibration, sessions: &[SessionFitReport]) -> String {
    let p = &cal.params;
    let mut s = String::from("radio parameters\n");
    let _ = writeln!(s, "  reference_loss_l0    {:.2} dB", p.reference_loss_l0);
    let _ = writeln!(s, "  path_loss_exponent   {:.2}", p.path_loss_exponent);
    let _ = writeln!(s, "  ambient_noise_floor  {:.2} dB", p.ambient_noise_floor);
    let _ = writeln!(s, "  interference_bonus   {:.2} dB", p.interference_bonus);
    for m in meshprobe_core::Material::ALL {
        let fitted = if cal.fitted_materials.contains(&m) { "" } else { "  (not fitted)" };
        let _ = writeln!(s, "  {:<20} {:.2} dB{}", m.as_str(), p.materials.get(m), fitted);
    }
    let _ = writeln!(s, "  sum squared error    {:.4}", cal.sum_squared_error);
    s.push_str("residuals (fitted - target)\n");
    for r in &cal.residuals {
        let _ = writeln!(
            s,
            "  {:<12} att {:>7.2} vs {:>6.2} ({:+.2})  snr {:>6.2} vs {:>6.2} ({:+.2})",
            r.label,
            r.fitted_attenuation,
            r.target_attenuation,
            r.attenuation_residual(),
            r.fitted_snr,
            r.target_snr,
            r.snr_residual()
        );
    }
    if !sessions.is_empty() {
        s.push_str("stochastic fits\n");
        for f in sessions {
            let m = &f.fit.model;
            let _ = writeln!(
                s,
                "  {:<12} contention {:.3} ms (sd {:.3}) loss_scale {:.6}  -> pd {:.2} ms, pdr {:.4}",
                f.scenario, m.contention_mean, m.contention_stddev, m.loss_scale, f.fit.simulated_mean_pd_ms, f.fit.simulated_pdr
            );
        }
    }
    s
}
