use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supercurve::fields::{gaussian, identity_curve, power_curve, random_curve, random_section, GlobalCurve, SuperSection};
use supercurve::moduli::*;
use supercurve::poly::Poly;
use supercurve::{LineBundle, Moebius, SpherePoint, C};

fn b1() -> LineBundle {
    LineBundle::new(-1).unwrap()
}

fn pt(re: f64, im: f64) -> SpherePoint {
    SpherePoint::finite(C::new(re, im))
}

/// All 1-based parent vectors `(j₂, …, j_n)` with `1 ≤ j_i < i`.
fn parent_vectors(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for i in 2..=n {
        out = out.into_iter().flat_map(|v| (1..i).map(move |j| [v.clone(), vec![j]].concat())).collect();
    }
    out
}

fn edge_set(edges: impl IntoIterator<Item = (usize, usize)>) -> BTreeSet<(usize, usize)> {
    edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect()
}

/// Labelled trees on `0..n` from Prüfer sequences.
fn prufer_trees(n: usize) -> Vec<BTreeSet<(usize, usize)>> {
    if n == 1 {
        return vec![BTreeSet::new()];
    }
    if n == 2 {
        return vec![edge_set([(0, 1)])];
    }
    let mut out = Vec::new();
    let total = n.pow((n - 2) as u32);
    for code in 0..total {
        let mut seq = Vec::new();
        let mut c = code;
        for _ in 0..n - 2 {
            seq.push(c % n);
            c /= n;
        }
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut edges = Vec::new();
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
            edges.push((leaf, s));
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        edges.push((rest[0], rest[1]));
        out.push(edge_set(edges));
    }
    out
}

fn component(n: usize, edges: &BTreeSet<(usize, usize)>, start: usize, removed: (usize, usize)) -> Vec<usize> {
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &(a, b) in edges {
            if (a, b) == removed || (b, a) == removed {
                continue;
            }
            let w = if a == v { b } else if b == v { a } else { continue };
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    (0..n).filter(|&v| seen[v]).collect()
}

/// Vertex 0 is the root and every vertex's neighbor towards it has a smaller index.
fn is_increasing(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    (1..n).all(|v| {
        let nbrs: Vec<usize> = edges.iter().filter_map(|&(a, b)| if a == v { Some(b) } else if b == v { Some(a) } else { None }).collect();
        nbrs.iter().any(|&w| w < v && component(n, edges, w, (v, w)).contains(&0))
    })
}

#[test]
fn parent_vectors_biject_onto_increasing_trees() {
    for n in 1..=7 {
        let pvs = parent_vectors(n);
        let mut decoded = BTreeSet::new();
        for pv in &pvs {
            let labels: Vec<usize> = (0..n.min(3)).map(|k| 1 + (k * 5 + pv.len()) % n).collect();
            let t = LabelledTree::decode(pv, &labels).unwrap();
            assert_eq!(t.encode(), (pv.clone(), labels));
            assert_eq!(t.len(), n);
            decoded.insert(edge_set(t.edges()));
        }
        assert_eq!(decoded.len(), pvs.len(), "injective for n = {n}");
        let oracle: BTreeSet<_> = prufer_trees(n).into_iter().filter(|e| is_increasing(n, e)).collect();
        assert_eq!(decoded, oracle, "n = {n}");
        assert_eq!(pvs.len(), (1..n).product::<usize>().max(1));
    }
    assert!(LabelledTree::decode(&[2], &[]).is_err());
    assert!(LabelledTree::decode(&[0], &[]).is_err());
    assert!(LabelledTree::decode(&[1], &[3]).is_err());
}

#[test]
fn subtree_matches_component_search() {
    for n in 2..=7 {
        for pv in parent_vectors(n) {
            let t = LabelledTree::decode(&pv, &[]).unwrap();
            let edges = edge_set(t.edges());
            for a in 0..n {
                for b in 0..n {
                    if t.adjacent(a, b) {
                        assert_eq!(t.subtree(a, b).unwrap(), component(n, &edges, b, (a, b)));
                    } else {
                        assert!(t.subtree(a, b).is_err());
                    }
                }
            }
        }
    }
}

fn brute_homomorphisms(t: &LabelledTree, t2: &LabelledTree) -> BTreeSet<Vec<usize>> {
    let (n, m) = (t.len(), t2.len());
    let edges = edge_set(t.edges());
    let mut out = BTreeSet::new();
    for code in 0..m.pow(n as u32) {
        let f: Vec<usize> = (0..n).map(|k| code / m.pow(k as u32) % m).collect();
        if (0..m).any(|v| !f.contains(&v)) {
            continue;
        }
        if t.labels().iter().zip(t2.labels()).any(|(&a, &b)| f[a] != b) {
            continue;
        }
        if edges.iter().any(|&(a, b)| f[a] != f[b] && !t2.adjacent(f[a], f[b])) {
            continue;
        }
        let fibres_connected = (0..m).all(|v| {
            let fibre: Vec<usize> = (0..n).filter(|&a| f[a] == v).collect();
            let inner: BTreeSet<_> = edges.iter().copied().filter(|&(a, b)| f[a] == v && f[b] == v).collect();
            component(n, &inner, fibre[0], (usize::MAX, usize::MAX)).iter().filter(|&&a| f[a] == v).count() == fibre.len()
        });
        if fibres_connected {
            out.insert(f);
        }
    }
    out
}

#[test]
fn homomorphisms_match_brute_force() {
    for n in 1..=5 {
        for pv in parent_vectors(n) {
            for m in 1..=n.min(4) {
                for pv2 in parent_vectors(m) {
                    for (l1, l2) in [(vec![], vec![]), (vec![1, n], vec![1, m])] {
                        let t = LabelledTree::decode(&pv, &l1).unwrap();
                        let t2 = LabelledTree::decode(&pv2, &l2).unwrap();
                        let got: BTreeSet<_> = homomorphisms(&t, &t2).unwrap().into_iter().collect();
                        assert_eq!(got, brute_homomorphisms(&t, &t2), "{pv:?} -> {pv2:?} labels {l1:?}");
                        for f in &got {
                            check_homomorphism(&t, &t2, f).unwrap();
                        }
                    }
                }
            }
        }
    }
}

fn two_vertex(a: GlobalCurve, b: GlobalCurve, z01: SpherePoint, z10: SpherePoint, labels: Vec<usize>, marked: Vec<SpherePoint>) -> StableSupercurve {
    let nodal = BTreeMap::from([((0, 1), z01), ((1, 0), z10)]);
    let comps = vec![SuperSection::zero(&a, b1()), SuperSection::zero(&b, b1())];
    StableSupercurve::new(LabelledTree::new(vec![0], labels).unwrap(), comps, nodal, marked).unwrap()
}

#[test]
fn masses_of_degree_one_and_two() {
    let x = two_vertex(identity_curve(), power_curve(2).unwrap(), pt(1.0, 0.0), pt(1.0, 0.0), vec![], vec![]);
    assert!(validate_stable(&x).is_empty());
    let m = component_masses(&x, 1e-10).unwrap();
    assert!((m.edge(0, 1).0 - 2.0 * PI).abs() < 1e-8);
    assert!((m.edge(1, 0).0 - PI).abs() < 1e-8);
    assert!((m.total_phi - 3.0 * PI).abs() < 1e-8);
    let (e, _) = restricted_energy(&x, &m, 0, &supercurve::energy::Region::Sphere, 1e-10).unwrap();
    assert!((e - m.phi[0] - m.edge(0, 1).0).abs() < 1e-12);
    let single = StableSupercurve::single(SuperSection::zero(&identity_curve(), b1()), vec![]);
    let m = component_masses(&single, 1e-10).unwrap();
    assert!(m.edges.is_empty() && (m.total_phi - PI).abs() < 1e-8);
}

#[test]
fn validation_diagnostics() {
    let b = LineBundle::new(-2).unwrap();
    assert!(validate_stable(&bubble_tree_limit(b)).is_empty());
    assert!(validate_stable(&ghost_tree_limit(b)).is_empty());
    let mut x = ghost_tree_limit(b);
    x.tree = LabelledTree::new(vec![0], vec![0, 0, 1, 0]).unwrap();
    assert!(validate_stable(&x).iter().any(|v| matches!(v, Violation::Unstable { alpha: 1, special: 2 })));
    let mut x = bubble_tree_limit(b);
    x.marked[0] = SpherePoint::origin();
    assert!(validate_stable(&x).iter().any(|v| matches!(v, Violation::Coincident { alpha: 0, .. })));
    let mut x = bubble_tree_limit(b);
    x.nodal.insert((0, 1), pt(0.5, 0.0));
    assert!(validate_stable(&x).iter().any(|v| matches!(v, Violation::NodalMismatch { .. })));
}

/// Identity spheres along a random tree; edge `e` is glued at `e + 1` on both sides.
fn identity_tree(rng: &mut ChaCha8Rng, n: usize) -> StableSupercurve {
    let parents: Vec<usize> = (1..n).map(|i| rng.gen_range(0..i)).collect();
    let marks = rng.gen_range(0..3usize);
    let labels: Vec<usize> = (0..marks).map(|_| rng.gen_range(0..n)).collect();
    let tree = LabelledTree::new(parents, labels).unwrap();
    let mut nodal = BTreeMap::new();
    for (k, (a, b)) in tree.edges().into_iter().enumerate() {
        nodal.insert((a, b), pt(k as f64 + 1.0, 0.0));
        nodal.insert((b, a), pt(k as f64 + 1.0, 0.0));
    }
    let marked = (0..marks).map(|i| pt(-1.0 - i as f64, 0.5)).collect();
    StableSupercurve::new(tree, vec![SuperSection::zero(&identity_curve(), b1()); n], nodal, marked).unwrap()
}

#[test]
fn restriction_examples() {
    let chain = {
        let nodal = BTreeMap::from([((0, 1), pt(2.0, 0.0)), ((1, 0), pt(2.0, 0.0)), ((1, 2), pt(3.0, 0.0)), ((2, 1), pt(3.0, 0.0))]);
        let comps = vec![SuperSection::zero(&identity_curve(), b1()); 3];
        StableSupercurve::new(LabelledTree::new(vec![0, 1], vec![2]).unwrap(), comps, nodal, vec![pt(0.0, 1.0)]).unwrap()
    };
    let (full, order) = restriction(&chain, &[0, 1, 2]).unwrap();
    assert_eq!(order, vec![0, 1, 2]);
    assert_eq!((full.tree.clone(), full.nodal.clone(), full.marked.clone()), (chain.tree.clone(), chain.nodal.clone(), chain.marked.clone()));
    let (mid, order) = restriction(&chain, &[1]).unwrap();
    assert_eq!(order, vec![1]);
    assert_eq!(mid.tree.len(), 1);
    assert_eq!(mid.marked, vec![pt(2.0, 0.0), pt(3.0, 0.0)]);
    assert!(restriction(&chain, &[0, 2]).is_err());
    assert!(restriction(&chain, &[]).is_err());
}

#[test]
fn restriction_preserves_stability() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let n = rng.gen_range(1..=6usize);
        let x = identity_tree(&mut rng, n);
        assert!(validate_stable(&x).is_empty());
        for mask in 1u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
            if !x.tree.is_connected(&set) {
                assert!(restriction(&x, &set).is_err());
                continue;
            }
            let (r, order) = restriction(&x, &set).unwrap();
            assert!(validate_stable(&r).is_empty());
            for (new, &old) in order.iter().enumerate() {
                assert_eq!(r.special_points(new).len(), x.special_points(old).len());
            }
        }
    }
}

fn random_moebius(rng: &mut ChaCha8Rng) -> Moebius {
    loop {
        if let Ok(m) = Moebius::new(gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng)) {
            if m.frobenius_sqr() < 20.0 {
                return m;
            }
        }
    }
}

/// Two random spheres with random sections, glued so that the nodal values agree.
fn random_pair(rng: &mut ChaCha8Rng) -> StableSupercurve {
    let c0 = random_curve(rng, 1, 2);
    let g = random_moebius(rng);
    let c1 = c0.pullback(&g);
    let p = pt(0.3, -0.2);
    let nodal = BTreeMap::from([((0, 1), p), ((1, 0), g.inverse().apply(&p))]);
    let comps = vec![random_section(rng, &c0, b1(), 0.5), random_section(rng, &c1, b1(), 0.5)];
    let x = StableSupercurve::new(LabelledTree::new(vec![0], vec![0, 1]).unwrap(), comps, nodal, vec![pt(-1.0, 0.4), pt(1.5, 0.0)]).unwrap();
    assert!(validate_stable(&x).is_empty(), "{:?}", validate_stable(&x));
    x
}

#[test]
fn constructed_equivalences_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_pair(&mut rng);
    let maps = vec![random_moebius(&mut rng), random_moebius(&mut rng)];
    let y = reparametrize(&x, &maps).unwrap();
    let known = Witness { f: vec![0, 1], maps: maps.iter().map(|m| m.inverse()).collect() };
    assert!(equivalence_residual(&x, &y, &known, 2000).unwrap() <= 1e-9);
    let opts = RhoOptions::default();
    let r = rho_eval(&x, &y, &known, 0.05, &opts).unwrap();
    assert!(r.total <= 1e-6, "{:?}", r.terms);
    let w = equivalent(&x, &y, 1e-6).expect("equivalence recovered");
    assert!(equivalence_residual(&x, &y, &w, 4000).unwrap() <= 1e-6);
    let best = rho_distance(&x, &y, 0.05, &opts).unwrap().unwrap();
    assert!(best.total <= 1e-4, "{:?}", best.terms);

    let mut z = y.clone();
    let mut bumped = z.components[0].curve().components().to_vec();
    bumped[0] = bumped[0].add(&Poly::constant(C::new(1e-2, 0.0)));
    z.components[0] = SuperSection::zero(&GlobalCurve::projective(bumped).unwrap(), b1());
    assert!(equivalent(&x, &z, 1e-4).is_none());
}

#[test]
fn automorphic_relabelling_is_equivalent() {
    let b = LineBundle::new(-1).unwrap();
    let x = ghost_tree_limit(b);
    // Swap the two ghosts: marks 3, 4 now sit on vertex 0.
    let p = |v: f64| pt(v, 0.0);
    let nodal = BTreeMap::from([((0, 1), SpherePoint::infinity()), ((1, 0), p(0.0))]);
    let y = StableSupercurve::new(
        LabelledTree::new(vec![0], vec![1, 1, 0, 0]).unwrap(),
        x.components.clone(),
        nodal,
        vec![p(1.0), p(-1.0), p(0.0), p(1.0)],
    )
    .unwrap();
    let w = equivalent(&x, &y, 1e-6).expect("swap is an equivalence");
    assert_eq!(w.f, vec![1, 0]);
}

#[test]
fn moving_one_marked_point() {
    let x = bubble_tree_limit(b1());
    // Chordal distance 0.1 from 1 along the real axis.
    let (mut lo, mut hi) = (1.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pt(mid, 0.0).chordal_distance(&pt(1.0, 0.0)) < 0.1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut y = x.clone();
    y.marked[0] = pt(lo, 0.0);
    let id = Witness { f: vec![0, 1], maps: vec![Moebius::identity(); 2] };
    let r = rho_eval(&x, &y, &id, 0.05, &RhoOptions::default()).unwrap();
    assert!((r.total - 0.1).abs() <= 1e-6, "{:?}", r.terms);
    assert!(r.terms[..6].iter().all(|&t| t <= 1e-12));
    let s = rho_eval(&x, &x, &id, 0.05, &RhoOptions::default()).unwrap();
    assert!(s.terms.iter().all(|&t| t <= 1e-9));
    assert!((r.terms.iter().sum::<f64>() - r.total).abs() <= 1e-15);
}

#[test]
fn no_admissible_homomorphism_means_infinity() {
    let member = bubble_tree_member(b1(), 100.0).unwrap();
    let limit = bubble_tree_limit(b1());
    assert!(rho_distance(&member, &limit, 0.05, &RhoOptions::default()).unwrap().is_none());
    let bad = Witness { f: vec![0], maps: vec![Moebius::identity()] };
    assert!(rho_eval(&member, &limit, &bad, 0.05, &RhoOptions::default()).is_err());
}

/// Equivalent targets give the same distance up to the search accuracy. Where the
/// infimum is sharp that is `2 · search_tol`; on the broad minima of a distant pair the
/// local search only resolves it to about one percent.
#[test]
fn distance_descends_to_equivalence_classes() {
    let opts = RhoOptions::default();
    let x = bubble_tree_limit(b1());
    let m = Moebius::new(C::new(1.0, 0.2), C::new(0.3, 0.0), C::new(-0.2, 0.1), C::new(0.9, 0.0)).unwrap();
    for (nu, rel) in [(1e4, 0.0), (1e3, 1e-2)] {
        let x1 = bubble_tree_member(b1(), nu).unwrap();
        let y1 = reparametrize(&x1, &[m]).unwrap();
        let a = rho_distance(&x, &x1, 0.05, &opts).unwrap().unwrap().total;
        let b = rho_distance(&x, &y1, 0.05, &opts).unwrap().unwrap().total;
        assert!((a - b).abs() <= 2.0 * opts.search_tol + rel * a, "nu = {nu}: {a} vs {b}");
    }
}

#[test]
fn triangle_substitute_on_an_equivalent_limit() {
    let opts = RhoOptions { grid: 4000, ..Default::default() };
    let x = bubble_tree_limit(b1());
    let maps = [Moebius::rotation_angle(0.3), Moebius::scaling(C::new(2.0, 0.0)).unwrap()];
    let x2 = reparametrize(&x, &maps).unwrap();
    let d = rho_distance(&x, &x2, 0.05, &opts).unwrap().unwrap().total;
    assert!(d < 0.05);
    let last = rho_distance(&x, &bubble_tree_member(b1(), 1e4).unwrap(), 0.05, &opts).unwrap().unwrap().total;
    assert!(last <= d + 1e-2, "{last} vs {d}");
}

#[test]
fn constant_sequence_and_malformed_ladders() {
    let x = ghost_tree_limit(b1());
    let opts = RhoOptions { grid: 2000, ..Default::default() };
    let id = Witness { f: vec![0, 1], maps: vec![Moebius::identity(); 2] };
    let rep = gromov_convergence_check(&[x.clone(), x.clone()], &x, Some(&[id.clone(), id.clone()]), 0.05, 1e-9, &opts).unwrap();
    assert!(rep.pass);
    assert!(rep.axioms.iter().all(|l| l.residuals.iter().all(|&r| r <= 1e-9)));
    assert!(gromov_convergence_check(&[x.clone()], &x, Some(&[id.clone(), id]), 0.05, 1e-2, &opts).is_err());
    assert!(gromov_convergence_check(&[], &x, None, 0.05, 1e-2, &opts).is_err());
    assert_eq!(auto_epsilon(&bubble_tree_limit(b1()), 1e-8).unwrap(), 0.5);
}
