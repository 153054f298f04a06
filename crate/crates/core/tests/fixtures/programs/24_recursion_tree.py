def depth(tree):
    if not tree:
        return 0
    left, right = tree[1], tree[2]
    return 1 + max(depth(left), depth(right))


t = (1, (2, None, (3, None, None)), (4, None, None))
d = depth(t)
print(d)
