//! Prints the overhead tables of every shipped engine profile.

use faasflow::bench::{bench_parallel, bench_sequence, bench_state, CalibrationProfile};
use faasflow::engines::Engine;
use faasflow::runtime::SimConfig;

fn main() {
    let config = SimConfig::default();
    let engines = [
        Engine::Sequences,
        Engine::ReactiveConductor,
        Engine::ClientScheduler,
        Engine::EventSourcing,
        Engine::Suspend,
    ];
    for engine in engines {
        let p = CalibrationProfile::default_for(engine);
        print!("{:<10} seq", engine.cli_name());
        for n in [5, 10, 20, 40, 80] {
            match bench_sequence(engine, n, &p, 1, &config) {
                Ok(s) if s.is_available() => print!(" {n}:{}", s.mean_ms),
                Ok(_) => print!(" {n}:NA"),
                Err(e) => print!(" {n}:err({e})"),
            }
        }
        match bench_state(engine, &p, 32_768, 1, &config) {
            Ok((a, b)) => print!(
                " | state {} -> {} (+{:.0}%)",
                a.mean_ms,
                b.mean_ms,
                (b.mean_ms / a.mean_ms - 1.0) * 100.0
            ),
            Err(e) => print!(" | state err({e})"),
        }
        print!(" | par");
        for n in [5, 10, 20, 40, 80] {
            match bench_parallel(engine, n, &p, 1, &config) {
                Ok(s) if s.is_available() => print!(" {n}:{}", s.mean_ms),
                Ok(_) => print!(" {n}:NA"),
                Err(_) => print!(" {n}:-"),
            }
        }
        println!();
    }
}
