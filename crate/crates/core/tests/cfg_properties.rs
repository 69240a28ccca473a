//! Property tests over randomly generated well-formed functions: the parsed
//! CFG must stay symmetric and edge counts must match the generator's plan.

use proptest::prelude::*;

use pass_pilot_core::ir::{extract_autophase, parse_ir};

#[derive(Clone, Debug)]
enum Term {
    Ret,
    Br(usize),
    CondBr(usize, usize),
    Switch(Vec<usize>),
}

fn term_strategy(n_blocks: usize) -> impl Strategy<Value = Term> {
    let idx = 0..n_blocks;
    prop_oneof![
        Just(Term::Ret),
        idx.clone().prop_map(Term::Br),
        (0..n_blocks, 0..n_blocks).prop_map(|(a, b)| Term::CondBr(a, b)),
        prop::collection::vec(0..n_blocks, 1..4).prop_map(Term::Switch),
    ]
}

fn plan_strategy() -> impl Strategy<Value = (Vec<Term>, Vec<u8>)> {
    (2usize..10).prop_flat_map(|n| {
        (
            prop::collection::vec(term_strategy(n), n),
            prop::collection::vec(0u8..3, n),
        )
    })
}

fn render(terms: &[Term], filler: &[u8]) -> String {
    let mut out = String::from("define void @gen(i32 %x, i1 %c) {\n");
    for (i, term) in terms.iter().enumerate() {
        out.push_str(&format!("b{i}:\n"));
        for k in 0..filler[i] {
            out.push_str(&format!("  %v{i}_{k} = add i32 %x, {k}\n"));
        }
        match term {
            Term::Ret => out.push_str("  ret void\n"),
            Term::Br(t) => out.push_str(&format!("  br label %b{t}\n")),
            Term::CondBr(a, b) => {
                out.push_str(&format!("  br i1 %c, label %b{a}, label %b{b}\n"))
            }
            Term::Switch(ts) => {
                out.push_str(&format!("  switch i32 %x, label %b{} [\n", ts[0]));
                for (ci, t) in ts.iter().enumerate().skip(1) {
                    out.push_str(&format!("    i32 {ci}, label %b{t}\n"));
                }
                out.push_str("  ]\n");
            }
        }
    }
    out.push_str("}\n");
    out
}

fn planned_successors(term: &Term) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut add = |t: usize| {
        let l = format!("b{t}");
        if !out.contains(&l) {
            out.push(l);
        }
    };
    match term {
        Term::Ret => {}
        Term::Br(t) => add(*t),
        Term::CondBr(a, b) => {
            add(*a);
            add(*b);
        }
        Term::Switch(ts) => ts.iter().for_each(|&t| add(t)),
    }
    out
}

proptest! {
    #[test]
    fn cfg_stays_symmetric((terms, filler) in plan_strategy()) {
        let text = render(&terms, &filler);
        let m = parse_ir(&text).unwrap();
        let f = &m.functions[0];
        prop_assert_eq!(f.blocks.len(), terms.len());

        for (block, term) in f.blocks.iter().zip(&terms) {
            prop_assert_eq!(&block.successors, &planned_successors(term));
        }
        for b in &f.blocks {
            for s in &b.successors {
                let t = f.blocks.iter().find(|x| &x.label == s).unwrap();
                prop_assert!(t.predecessors.contains(&b.label));
            }
            for p in &b.predecessors {
                let src = f.blocks.iter().find(|x| &x.label == p).unwrap();
                prop_assert!(src.successors.contains(&b.label));
            }
        }

        let features = extract_autophase(&m);
        let planned_edges: u64 = terms.iter().map(|t| planned_successors(t).len() as u64).sum();
        prop_assert_eq!(features.values[18], planned_edges);
        let planned_insts: u64 = terms.len() as u64 + filler.iter().map(|&f| f as u64).sum::<u64>();
        prop_assert_eq!(features.values[51], planned_insts);
    }
}
