def matmul(a, b):
    rows = len(a)
    cols = len(b[0])
    inner = len(b)
    out = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            for k in range(inner):
                out[i][j] += a[i][k] * b[k][j]
    return out


m = [[1, 2], [3, 4]]
n = [[5, 6], [7, 8]]
for row in matmul(m, n):
    print(*row)
