use std::collections::{HashSet, VecDeque};

use proptest::prelude::*;
use qkinetic::boardgame::*;
use qkinetic::Error;
use Side::{Left, Right};

fn mu(v: &[usize]) -> CollapsingMap {
    CollapsingMap::new(v.to_vec()).unwrap()
}

fn tree_one() -> EchelonTree {
    EchelonTree::from_edges(5, &[(1, Right, 2), (2, Left, 3), (2, Right, 5), (3, Left, 4), (3, Right, 6)]).unwrap()
}

#[test]
fn collapsing_maps_are_checked() {
    assert!(CollapsingMap::new(vec![1, 2, 3]).is_ok());
    assert!(matches!(CollapsingMap::new(vec![2]), Err(Error::Validation(_))));
    assert!(matches!(CollapsingMap::new(vec![1, 3]), Err(Error::Validation(_))));
    assert!(CollapsingMap::new(vec![]).is_err());
    for k in 1..=6 {
        let all = CollapsingMap::all(k).unwrap();
        let fact: usize = (1..=k).product();
        assert_eq!(all.len(), fact);
        assert!(all.iter().all(|m| m.get(2) == 1));
    }
}

#[test]
fn tree_one_from_its_map() {
    assert_eq!(mu_to_tree(&mu(&[1, 1, 1, 2, 3])), tree_one());
    let small = EchelonTree::from_edges(1, &[(1, Right, 2)]).unwrap();
    assert_eq!(mu_to_tree(&mu(&[1])), small);
    assert_eq!(tree_to_mu(&small), mu(&[1]));
}

#[test]
fn nine_node_tree_to_map() {
    let t = EchelonTree::from_edges(
        8,
        &[(1, Right, 2), (2, Left, 3), (2, Right, 5), (3, Left, 4), (3, Right, 6), (4, Right, 7), (6, Right, 8), (8, Left, 9)],
    )
    .unwrap();
    assert_eq!(tree_to_mu(&t), mu(&[1, 1, 1, 2, 3, 4, 6, 6]));
    assert_eq!(mu_to_tree(&tree_to_mu(&t)), t);
}

#[test]
fn inadmissible_trees_are_refused() {
    // child smaller than parent
    assert!(EchelonTree::from_edges(2, &[(1, Right, 2), (3, Left, 2)]).is_err());
    assert!(EchelonTree::from_edges(2, &[(1, Right, 3), (3, Left, 2)]).is_err());
    // detached node, double parent, root with a left child
    assert!(EchelonTree::from_edges(2, &[(1, Right, 2)]).is_err());
    assert!(EchelonTree::from_edges(2, &[(1, Right, 2), (2, Left, 3), (1, Left, 3)]).is_err());
    assert!(EchelonTree::from_edges(2, &[(1, Right, 2), (2, Left, 3), (2, Left, 3)]).is_err());
}

#[test]
fn three_step_maps_give_distinct_admissible_trees() {
    let trees: HashSet<EchelonTree> = CollapsingMap::all(3).unwrap().iter().map(mu_to_tree).collect();
    assert_eq!(trees.len(), 6);
    for t in &trees {
        assert!(t.edges().iter().all(|&(p, _, c)| c > p));
        // rebuilding through the checked constructor accepts it
        assert_eq!(&EchelonTree::from_edges(3, &t.edges()).unwrap(), t);
    }
}

#[test]
fn maps_and_trees_are_in_bijection() {
    for k in 1..=6 {
        let mut seen = HashSet::new();
        for m in CollapsingMap::all(k).unwrap() {
            let t = mu_to_tree(&m);
            assert_eq!(tree_to_mu(&t), m);
            assert_eq!(mu_to_tree(&tree_to_mu(&t)), t);
            assert!(seen.insert(t));
        }
    }
}

#[test]
fn catalan_counts() {
    let want = [1u64, 1, 2, 5, 14, 42, 132, 429];
    for (k, &c) in want.iter().enumerate() {
        assert_eq!(count_skeletons(k).unwrap(), c);
    }
    for k in 1..=MAX_SKELETON_K {
        let all = Skeleton::all(k).unwrap();
        assert_eq!(all.len() as u64, count_skeletons(k).unwrap());
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), all.len());
    }
    for k in 0..=30 {
        assert!(count_skeletons(k).unwrap() as f64 <= 4f64.powi(k as i32));
    }
    assert!(matches!(count_skeletons(40), Err(Error::Overflow(_))));
}

#[test]
fn skeleton_count_by_brute_force_grouping() {
    // group all trees from all maps by shape
    for k in 1..=6 {
        let shapes: HashSet<Skeleton> = CollapsingMap::all(k).unwrap().iter().map(|m| mu_to_tree(m).skeleton()).collect();
        assert_eq!(shapes.len() as u64, count_skeletons(k).unwrap());
    }
}

#[test]
fn canonical_labels_of_tree_one() {
    let s = tree_one().skeleton();
    assert_eq!(canonicalize(&s), tree_one());
    assert_eq!(s.id(), "33000");
}

#[test]
fn left_chain_is_labelled_in_order() {
    for k in 1..=7 {
        let t = canonicalize(&Skeleton::left_chain(k).unwrap());
        for j in 2..=k {
            assert_eq!(t.left(j), Some(j + 1));
        }
        assert_eq!(tree_to_mu(&t), mu(&vec![1; k]));
    }
}

#[test]
fn canonical_forms_are_upper_echelon() {
    for k in 1..=6 {
        for s in Skeleton::all(k).unwrap() {
            let c = canonicalize(&s);
            assert_eq!(c.skeleton(), s);
            let m = tree_to_mu(&c);
            assert!(m.is_upper_echelon(), "{m}");
            // and it is the only upper-echelon member of its class
            let members = enumerate_class(&s).unwrap();
            assert_eq!(members.iter().filter(|x| x.is_upper_echelon()).collect::<Vec<_>>(), vec![&m]);
        }
    }
}

#[test]
fn tree_one_class_has_eight_members() {
    let class = enumerate_class(&tree_one().skeleton()).unwrap();
    assert_eq!(class.len(), 8);
    // the eight trees drawn for the class, as (left of 2, left of that, right of that, right of 2)
    let drawn = [(3, 4, 6, 5), (3, 5, 6, 4), (4, 5, 6, 3), (3, 6, 5, 4), (4, 6, 5, 3), (3, 6, 4, 5), (3, 5, 4, 6), (3, 4, 5, 6)];
    let got: HashSet<(usize, usize, usize, usize)> = class
        .iter()
        .map(|m| {
            let t = mu_to_tree(m);
            let a = t.left(2).unwrap();
            (a, t.left(a).unwrap(), t.right(a).unwrap(), t.right(2).unwrap())
        })
        .collect();
    assert_eq!(got, drawn.into_iter().collect());
}

#[test]
fn three_step_classes() {
    let mut sizes: Vec<usize> = Skeleton::all(3).unwrap().iter().map(|s| enumerate_class(s).unwrap().len()).collect();
    sizes.sort();
    assert_eq!(sizes, vec![1, 1, 1, 1, 2]);
    let one = Skeleton::all(1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(enumerate_class(&one[0]).unwrap(), vec![mu(&[1])]);
}

#[test]
fn classes_partition_all_maps() {
    for k in 1..=6 {
        let grouped = classes_by_skeleton(k).unwrap();
        let mut total = 0;
        for s in Skeleton::all(k).unwrap() {
            let mut members = grouped[&s].clone();
            members.sort();
            assert_eq!(enumerate_class(&s).unwrap(), members);
            total += members.len();
        }
        assert_eq!(total, (1..=k).product::<usize>());
    }
    let sum: usize = Skeleton::all(5).unwrap().iter().map(|s| enumerate_class(s).unwrap().len()).sum();
    assert_eq!(sum, 120);
}

#[test]
fn enumeration_limits() {
    let big = Skeleton::left_chain(MAX_CLASS_K + 1).unwrap();
    assert!(matches!(enumerate_class(&big), Err(Error::Unsupported(_))));
    assert!(Skeleton::from_code(vec![1]).is_err());
    assert!(Skeleton::from_code(vec![0, 0]).is_err());
    assert!(Skeleton::from_code(vec![3, 0, 0]).is_ok());
}

#[test]
fn tree_one_time_domain() {
    let d = time_domain(&tree_one());
    let got: HashSet<(usize, usize)> = d.pairs.iter().cloned().collect();
    assert_eq!(got, [(1, 2), (2, 3), (3, 4), (3, 6), (2, 5)].into_iter().collect());
    assert_eq!(d.to_string(), "t1>=t2;t2>=t3;t2>=t5;t3>=t4;t3>=t6");
}

#[test]
fn chain_time_domain_is_a_total_order() {
    let d = time_domain(&canonicalize(&Skeleton::left_chain(4).unwrap()));
    assert_eq!(d.pairs, vec![(1, 2), (2, 3), (3, 4), (4, 5)]);
}

#[test]
fn class_union_is_the_time_domain() {
    for k in 1..=4 {
        for (i, s) in Skeleton::all(k).unwrap().iter().enumerate() {
            let r = region_equality(s, 100_000, 17 + i as u64).unwrap();
            assert_eq!(r.mismatches, 0, "{r:?}");
            let frac = r.domain_hits as f64 / r.points as f64;
            let sd = (r.expected_fraction() * (1.0 - r.expected_fraction()) / r.points as f64).sqrt();
            assert!((frac - r.expected_fraction()).abs() <= 5.0 * sd + 1e-12, "{r:?}");
        }
    }
}

#[test]
fn moves_on_tree_one() {
    let m = mu(&[1, 1, 1, 2, 3]);
    let sigma: Vec<usize> = (2..=6).collect();
    // swapping labels 5 and 6
    let (m2, s2) = km_move(&m, &sigma, 5).unwrap();
    assert_eq!(mu_to_tree(&m2).skeleton(), mu_to_tree(&m).skeleton());
    assert_eq!(s2, vec![2, 3, 4, 6, 5]);
    assert_eq!(km_move(&m2, &s2, 5).unwrap(), (m.clone(), sigma.clone()));
    // μ(3) = μ(4): 4 is the left child of 3
    assert!(matches!(km_move(&m, &sigma, 3), Err(Error::Validation(_))));
    // 3 is the left child of 2
    assert!(km_move(&m, &sigma, 2).is_err());
    assert!(km_move(&m, &sigma[..4], 5).is_err());
}

/// BFS over acceptable moves from `start`.
fn reachable(start: &CollapsingMap) -> HashSet<CollapsingMap> {
    let k = start.k();
    let sigma: Vec<usize> = (2..=k + 1).collect();
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([start.clone()]);
    while let Some(m) = queue.pop_front() {
        for j in 2..=k {
            if let Ok((n, _)) = km_move(&m, &sigma, j) {
                if seen.insert(n.clone()) {
                    queue.push_back(n);
                }
            }
        }
    }
    seen
}

#[test]
fn moves_connect_each_class() {
    for k in 1..=5 {
        for s in Skeleton::all(k).unwrap() {
            let canon = tree_to_mu(&canonicalize(&s));
            let class: HashSet<CollapsingMap> = enumerate_class(&s).unwrap().into_iter().collect();
            assert_eq!(reachable(&canon), class);
            for m in &class {
                assert!(reachable(m).contains(&canon));
            }
        }
    }
}

#[test]
fn tabulation_rows() {
    let rows = tabulate(3).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().map(|r| r.class_size).sum::<usize>(), 6);
    let mut buf = Vec::new();
    ClassRow::write_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("skeleton_id,class_size,canonical_mu,inequalities\n"));
    assert!(text.contains(",2,1 1 2,t1>=t2;t2>=t3;t2>=t4\n"), "{text}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accepted_moves_keep_the_skeleton_and_undo_themselves(
        raw in prop::collection::vec(0usize..1000, 7),
        perm in Just((2usize..=8).collect::<Vec<_>>()).prop_shuffle(),
        j in 2usize..=7,
    ) {
        let m = mu(&raw.iter().enumerate().map(|(i, r)| 1 + r % (i + 1)).collect::<Vec<_>>());
        match km_move(&m, &perm, j) {
            Ok((m2, s2)) => {
                prop_assert_eq!(mu_to_tree(&m2).skeleton(), mu_to_tree(&m).skeleton());
                prop_assert_eq!(km_move(&m2, &s2, j).unwrap(), (m.clone(), perm.clone()));
            }
            Err(e) => {
                let parent_child = m.get(j) == m.get(j + 1) || m.get(j + 1) == j;
                prop_assert!(parent_child, "{e}");
            }
        }
    }
}
