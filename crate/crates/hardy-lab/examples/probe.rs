// probe: lambda_infinity_bounds on disk / exterior ball / dumbbell
use hardy_lab::geometry::{DomainSpec, Shape};
use hardy_lab::hardy::{lambda_infinity_bounds, LambdaOpts};
use hardy_lab::scalars::PExponent;
use std::time::Instant;

fn main() {
    let mut opts = LambdaOpts::default();
    opts.h = 1.0 / 128.0;
    let disk = DomainSpec::new(Shape::Disk { r: 1.0 }).unwrap();
    let pe = PExponent::new(2.0, 2).unwrap();
    let t = Instant::now();
    let b = lambda_infinity_bounds(&disk, pe, &opts).unwrap();
    println!("disk p=2: lower {:.5} upper {:.5} witness {:?} ({:?})", b.lower, b.upper, b.lower_witness, t.elapsed());

    let ball = DomainSpec::new(Shape::ExteriorBall { r: 1.0 }).unwrap();
    for n in [3u32, 5] {
        let pe = PExponent::new(2.0, n).unwrap();
        let mut o2 = LambdaOpts::default();
        o2.h = 1.0 / 256.0;
        o2.collar_width = 0.5;
        o2.r_max = 600.0;
        let t = Instant::now();
        let b = lambda_infinity_bounds(&ball, pe, &o2).unwrap();
        println!("ext ball p=2 n={n}: lower {:.5} upper {:.5} witness {:?} ({:?})", b.lower, b.upper, b.lower_witness, t.elapsed());
    }
    let dumb = DomainSpec::new(Shape::Dumbbell { bulb_r: 1.0, neck_half_width: 0.15, neck_length: 1.5 }).unwrap();
    let mut o3 = LambdaOpts::default();
    o3.h = 1.0 / 128.0;
    o3.collar_width = 0.12;
    let t = Instant::now();
    let b = lambda_infinity_bounds(&dumb, pe_dumb(), &o3).unwrap();
    println!("dumbbell p=2: lower {:.5} upper {:.5} witness {:?} ({:?})", b.lower, b.upper, b.lower_witness, t.elapsed());
}

fn pe_dumb() -> hardy_lab::PExp { PExponent::new(2.0, 2).unwrap() }
